"""REST APIs over model instances, driven by their metamodels."""
from .instance import ModelInstance
from .metamodel import Metamodel, parse_metamodel
from .representation import key_name

__version__ = "0.1.0"

__all__ = ["Metamodel", "ModelInstance", "key_name", "parse_metamodel", "__version__"]
