# Configuration file for the Sphinx documentation builder.
# https://www.sphinx-doc.org/en/master/usage/configuration.html

import os
import sys

# Document the working tree, not an installed copy.
sys.path.insert(0, os.path.abspath('..'))

import cmolink  # noqa: E402

# -- Project information -----------------------------------------------------

project = "cmolink"
copyright = "2026-%Y, cmolink developers"
author = "cmolink developers"
release = cmolink.__version__
version = ".".join(release.split(".")[:2])

# -- General configuration

extensions = [
    "sphinx.ext.duration",
    "sphinx.ext.doctest",
    "sphinx.ext.autodoc",
    "sphinx.ext.autosummary",
    "sphinx.ext.intersphinx",
]

intersphinx_mapping = {
    "python": ("https://docs.python.org/3/", None),
    "numpy": ("https://numpy.org/doc/stable/", None),
    "scipy": ("https://docs.scipy.org/doc/scipy/", None),
}
intersphinx_disabled_domains = ["std"]

exclude_patterns = ["_build"]

# -- Options for HTML output -------------------------------------------------

html_theme_options = {
    'fixed_sidebar': True,
}

autoclass_content = 'both'
autodoc_member_order = 'bysource'
