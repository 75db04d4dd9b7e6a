"""pano3d: single-view 3D reconstruction from synthetic panoramic X-rays."""

__version__ = "0.1.0"
