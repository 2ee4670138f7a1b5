"""Utterance encoder, context layers, classifier and the assembled model."""
