# Sphinx configuration of the pyecodrive documentation

import os
import sys

sys.path.insert(0, os.path.abspath("../.."))

from pyecodrive.version import __version__  # noqa

project = "pyecodrive"
author = "pyecodrive developers"
copyright = "2026, " + author
release = __version__
version = ".".join(__version__.split(".")[:2])

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.autosummary",
    "sphinx.ext.mathjax",
    "sphinx.ext.napoleon",
]

# numpy style docstrings only
napoleon_google_docstring = False
napoleon_use_param = False
napoleon_use_ivar = True
autosummary_generate = ["api_references.rst"]
autodoc_mock_imports = ["pyarrow"]

master_doc = "index"
source_suffix = ".rst"
exclude_patterns = ["_build"]
pygments_style = "sphinx"

html_theme = "sphinx_rtd_theme"
htmlhelp_basename = "pyecodrivedoc"

latex_elements = {"papersize": "a4paper", "pointsize": "11pt"}
latex_documents = [
    ("index", "pyecodrive.tex", "pyecodrive Documentation", author, "manual"),
]
man_pages = [("index", "pyecodrive", "pyecodrive Documentation", [author], 1)]
