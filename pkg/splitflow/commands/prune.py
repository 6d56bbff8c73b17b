from .base import Base
from ..config import prune, verify_sections


class Prune(Base):
    """Remove registered runs whose directories no longer exist"""

    def run(self):
        verify_sections()
        self.emit({"pruned": prune()})
