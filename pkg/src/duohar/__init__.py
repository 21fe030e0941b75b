"""duohar: dual-stream contrastive representation learning for tri-axial
accelerometer recordings, with downstream activity classification and a
subject-disjoint evaluation harness."""

__version__ = "0.1.0"
