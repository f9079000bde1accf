try:
    from tomllib import loads
except ImportError:  # Python < 3.11
    from tomli import loads

__all__ = ["loads"]
