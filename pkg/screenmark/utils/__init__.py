from .synthetic import crop_edge, load_corpus, paste_on_background, synthetic_corpus, synthetic_host

__all__ = ["crop_edge", "load_corpus", "paste_on_background", "synthetic_corpus", "synthetic_host"]
