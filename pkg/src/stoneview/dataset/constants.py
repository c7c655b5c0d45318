"""Class and view vocabulary for the six-type kidney stone task."""

STONE_CLASSES = ("WW", "WD", "AU", "STR", "BRU", "CYS")
NUM_CLASSES = len(STONE_CLASSES)
CLASS_TO_INDEX = {c: i for i, c in enumerate(STONE_CLASSES)}

VIEW_SURFACE = "surface"
VIEW_SECTION = "section"
VIEWS = (VIEW_SURFACE, VIEW_SECTION)

DEFAULT_PATCH_SIZE = 256
DEFAULT_MAX_OVERLAP = 20
DEFAULT_PATCH_BUDGET = 1000
