# svio documentation build configuration file.
#
# This file is execfile()d with the current directory set to its containing dir.

import svio

# -- General configuration -----------------------------------------------------

extensions = ['sphinx.ext.autodoc', 'sphinx.ext.doctest', 'sphinx.ext.mathjax']

templates_path = ['_templates']
source_suffix = '.rst'
source_encoding = 'utf-8'
master_doc = 'index'

project = 'svio'
copyright = '2026, The svio authors'

# The short X.Y version and the full version, including alpha/beta/rc tags.
version = svio.__version__
release = svio.__version__

language = 'en'
exclude_patterns = ['_build']
pygments_style = 'sphinx'

# Show the signatures of the dataclasses with their defaults.
autodoc_member_order = 'bysource'
autodoc_typehints = 'description'

# -- Options for HTML output ---------------------------------------------------

html_theme = 'alabaster'
html_static_path = ['_static']
htmlhelp_basename = 'sviodoc'

# -- Options for LaTeX and manual page output ----------------------------------

latex_documents = [
    ('index', 'svio.tex', 'svio Documentation', 'The svio authors', 'manual'),
]
man_pages = [
    ('index', 'svio', 'svio Documentation', ['The svio authors'], 1)
]
