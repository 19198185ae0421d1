"""Exception type shared by every module.

Each error carries a stable machine-readable ``code`` (for example
``"incompatible-shapes"``) so callers and the CLI can branch on it without
parsing messages.
"""


class BnnError(ValueError):
    def __init__(self, code: str, message: str | None = None):
        self.code = code
        super().__init__(f"{code}: {message}" if message else code)
