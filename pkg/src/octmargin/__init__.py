"""OCT breast-tissue margin assessment: surface detection, patch extraction,
a small CNN with four regularization strategies (including slice-sampled
function-norm), cross-validated model selection, ROC evaluation and tumor
overlays."""

__version__ = "0.1.0"
