"""Visual-page conditioning for a miniature encoder/generator pair."""
