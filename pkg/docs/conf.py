# -*- coding: utf-8 -*-
import os
import sys
sys.path.insert(0, os.path.abspath('..'))
from riiu import __version__

project = u'riiu'
copyright = u'2026, The riiu developers'
author = u'The riiu developers'

version = __version__
release = __version__

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.autosummary',
    'sphinx.ext.mathjax',
    'numpydoc',
]

html_theme = 'sphinx_rtd_theme'
html_short_title = project
htmlhelp_basename = 'riiudoc'

autosummary_generate = True
numpydoc_show_class_members = False

autodoc_default_options = {
    'members': True
}

autodoc_member_order = 'groupwise'
