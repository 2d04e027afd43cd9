"""
DistilVAD - Frame-level video anomaly detection by adversarial
multi-teacher knowledge distillation into a compact CNN + CvT student.
"""
__version__ = "0.1.0"
