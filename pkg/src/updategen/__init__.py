"""updategen: grounded update-sentence generation workbench.

Builds citation-grounded (document, context, update) corpora from wikitext
dumps plus crawled news pages, trains extractive and neural systems that
propose the next sentence for a curated passage, and scores them with
reference-based metrics.
"""

__version__ = "0.1.0"
