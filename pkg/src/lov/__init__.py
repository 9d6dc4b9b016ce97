"""Whitelisting benign RPKI-invalid routes: validation, classification,
visibility-based hijack verification and a quarantined whitelist."""

__version__ = "0.1.0"
