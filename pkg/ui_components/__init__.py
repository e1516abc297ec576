# Python module imports
__all__ = ['charts']
