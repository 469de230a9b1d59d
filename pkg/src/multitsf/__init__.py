"""Multi-view audio-visual action recognition with transformer-based sensor fusion."""

from .episode import ActionEvent, Episode
from .model import MultiTSF, ModelOutput
from .trainkit import RunConfig

__all__ = ["ActionEvent", "Episode", "ModelOutput", "MultiTSF", "RunConfig"]
__version__ = "0.1.0"
