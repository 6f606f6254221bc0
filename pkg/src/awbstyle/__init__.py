"""awbstyle: white-balance correction by blending multi-setting renderings
with learned per-pixel weighting maps."""

__version__ = "0.1.0"
