# -*- coding: utf-8 -*-
#
# gopseg documentation build configuration file.
#
# This file is execfile()d with the current directory set to its
# containing dir.

from __future__ import (absolute_import, division, print_function,
                        unicode_literals)

import sys
import os
import os.path

# Import gopseg from the installed package or, failing that, the source
# tree.
try:
    import gopseg
except ImportError:
    sys.path.insert(0, os.path.abspath('../py'))
    import gopseg

# -- General configuration ------------------------------------------------

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.intersphinx',
    'sphinx.ext.todo',
    'sphinx.ext.mathjax',
    'sphinx.ext.viewcode',
    'sphinx.ext.napoleon'
]

# The suffix of source filenames.
source_suffix = '.rst'

# The master toctree document.
master_doc = 'index'

# General information about the project.
project = 'gopseg'
copyright = '2026, gopseg developers'
author = 'gopseg developers'

# The short X.Y version.
version = gopseg.__version__.split('-', 1)[0]
# The full version, including alpha/beta/rc tags.
release = gopseg.__version__

exclude_patterns = ['_build']

pygments_style = 'sphinx'

# Mock the plotting and FITS packages so the API pages build without them.
autodoc_mock_imports = ['fitsio', 'matplotlib']

napoleon_google_docstring = True

# -- Options for HTML output ----------------------------------------------

try:
    import sphinx_rtd_theme
    html_theme = 'sphinx_rtd_theme'
    html_theme_path = [sphinx_rtd_theme.get_html_theme_path()]
except ImportError:
    html_theme = 'default'

htmlhelp_basename = 'gopsegdoc'

# -- Options for LaTeX and manual page output -----------------------------

latex_documents = [
    ('index', 'gopseg.tex', 'gopseg Documentation',
     'gopseg developers', 'manual'),
]

man_pages = [
    ('index', 'gopseg', 'gopseg Documentation',
     ['gopseg developers'], 1)
]
