"""feedforge: compile product searches to SPARQL and publish results as
RSS/Atom feeds with GeoRSS coordinates and embedded RDFa."""

__version__ = "0.1.0"
