"""Credible autocoder：帶控制理論合約的程式自動生成管線。"""

__all__ = ["__version__"]

__version__ = "0.1.0"
