from .text_branch import TextBranch
from .submap_branch import SubmapBranch
from .fine_model import FineModel

__all__ = ["TextBranch", "SubmapBranch", "FineModel"]
