"""Exception types shared across the toolkit."""


class DataError(ValueError):
    """Invalid input data: unreadable files, bad geometry, out-of-range labels."""
