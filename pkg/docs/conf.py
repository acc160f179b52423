#!/usr/bin/env python3
# swarm-ltl documentation build configuration file.
#
# This file is execfile()d with the current directory set to its
# containing dir.

import os
import re
import sys
from pathlib import Path

sys.path.insert(0, os.path.abspath('..'))

_init = (Path(__file__).parent.parent / 'swarm_ltl' / '__init__.py').read_text()
_version = re.search(r'^__version__\W*=\W*"([\d.abrc]+)"', _init, re.M)

# -- General configuration ------------------------------------------------

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.intersphinx',
    'sphinx.ext.todo',
    'sphinx.ext.coverage',
    'sphinx.ext.viewcode',
]

templates_path = ['_templates']
source_suffix = '.rst'
master_doc = 'index'

project = 'swarm-ltl'
copyright = '2026, swarm-ltl contributors'
author = 'swarm-ltl contributors'

version = release = _version.group(1) if _version else 'unknown'

exclude_patterns = ['_build', 'Thumbs.db', '.DS_Store']
pygments_style = 'sphinx'
todo_include_todos = True

# -- Options for HTML output ----------------------------------------------

html_theme = "alabaster"
htmlhelp_basename = 'swarm-ltldoc'

# -- Options for manual page output ---------------------------------------

man_pages = [
    (master_doc, 'swarm-ltl', 'swarm-ltl Documentation', [author], 1)
]

intersphinx_mapping = {'python': ('https://docs.python.org/3', None),
                       'numpy': ('https://numpy.org/doc/stable', None),
                       'scipy': ('https://docs.scipy.org/doc/scipy', None)}
