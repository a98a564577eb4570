"""The classifier being trained, its evaluation and hard-sample mining."""

from classifier.mining import EvalReport, evaluate, find_hard_samples
from classifier.model import ClassifierArch, ConvClassifier, classifier_logits
from classifier.training import classifier_loss, learning_rate, train_classifier_epoch

__all__ = [
    "ClassifierArch",
    "ConvClassifier",
    "EvalReport",
    "classifier_logits",
    "classifier_loss",
    "evaluate",
    "find_hard_samples",
    "learning_rate",
    "train_classifier_epoch",
]
