#!/usr/bin/env python3
# -*- coding: utf-8 -*-
#
# splitflow documentation build configuration file.
#
# This file is execfile()d with the current directory set to its
# containing dir.

import alabaster
import sys
import os

# General information about the project.
project = "splitflow"
copyright = "2026, the splitflow developers"
author = "the splitflow developers"

# Make the package importable without installing it.
sys.path.insert(0, os.path.abspath(".."))

from splitflow import __version__ as source_version  # noqa: E402

# -- General configuration ------------------------------------------------

needs_sphinx = "1.0"  # numpydoc requires sphinx >= 1.0

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.doctest",
    "sphinx.ext.intersphinx",
    "sphinx.ext.mathjax",
    "sphinx.ext.autosummary",
    "sphinx.ext.napoleon",
    "sphinx.ext.viewcode",
    "alabaster",
]

templates_path = ["_templates"]
source_suffix = ".rst"
master_doc = "index"

# Automatically generate stub pages for API
autoclass_content = "both"  # include both class docstring and __init__
autodoc_default_flags = ["members", "inherited-members"]
autosummary_generate = True

# Napoleon settings (other than default)
napoleon_google_docstring = False
napoleon_use_rtype = False

version = source_version
release = source_version
language = None

exclude_patterns = ["_build", "Thumbs.db", ".DS_Store"]
pygments_style = "sphinx"

# -- Options for HTML output ----------------------------------------------

html_theme = "alabaster"
html_theme_options = {
    "description": "Few-step flow models trained by interval splitting",
    "show_powered_by": True,
    "fixed_sidebar": True,
}
html_theme_path = [alabaster.get_path()]
html_static_path = []
html_sidebars = {"**": ["about.html", "navigation.html", "searchbox.html"]}
html_domain_indices = False
htmlhelp_basename = "splitflowdoc"

# -- Options for LaTeX, man and Texinfo output ------------------------------

latex_documents = [
    ("index", "splitflow.tex", "splitflow Documentation", author, "manual")
]
man_pages = [("index", "splitflow", "splitflow Documentation", [author], 1)]
texinfo_documents = [
    (
        "index",
        "splitflow",
        "splitflow Documentation",
        author,
        "splitflow",
        "Few-step flow models trained by interval splitting.",
        "Miscellaneous",
    )
]
texinfo_domain_indices = False

intersphinx_mapping = {
    "python": ("https://docs.python.org/3", None),
    "numpy": ("https://numpy.org/doc/stable/", None),
}
