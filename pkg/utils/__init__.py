# Python module imports
__all__ = ['helper']
