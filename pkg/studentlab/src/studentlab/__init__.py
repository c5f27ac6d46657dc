"""Student-side lab for the entity-linking pipeline: fine-tune an open-source
model on teacher-generated re-ranking data via low-rank adapters, serve it
behind the chat-completion wire format, and export embeddings in the
pipeline's store format."""

__version__ = "0.1.0"
