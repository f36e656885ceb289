"""anomkit: unsupervised anomaly detection in layered raster volumes.

Learns normal appearance from healthy volumes with multi-scale convolutional
autoencoders, flags out-of-distribution superpixels with a linear One-Class
SVM, and sub-categorizes anomalous regions with spherical k-means.
"""

__version__ = "0.1.0"
