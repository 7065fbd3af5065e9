# -*- coding: utf-8 -*-
#
# mmts documentation build configuration file.

import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import mmts  # noqa: E402

extensions = ['sphinx.ext.autodoc', 'sphinx.ext.viewcode']

templates_path = ['_templates']
source_suffix = '.rst'
master_doc = 'index'

project = u'mmts'
copyright = u'2026, Ramon Maria Gallart Escolà'

version = mmts.__version__
release = mmts.__version__

exclude_patterns = ['_build']
pygments_style = 'sphinx'

# scipy is mocked out while rendering the API pages.
autodoc_mock_imports = ['scipy']

html_theme = 'default'
html_static_path = ['_static']
htmlhelp_basename = 'mmtsdoc'

latex_documents = [
    ('index', 'mmts.tex', u'mmts Documentation', u'Ramon Maria Gallart Escolà', 'manual'),
]

man_pages = [
    ('index', 'mmts', u'mmts Documentation', [u'Ramon Maria Gallart Escolà'], 1),
]
