"""Learning safety-critical traffic scenarios with an autoregressive Gaussian policy."""

from riskgen.errors import ConfigError, NumericError, RiskgenError

__version__ = "0.1.0"

__all__ = ["ConfigError", "NumericError", "RiskgenError", "__version__"]
