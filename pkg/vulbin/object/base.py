#  Copyright (c) 2024. VulBin Authors
"""
Base Objects used by the Library
--------------------------------
"""
import copy
from datetime import datetime
from enum import Enum
from typing import Union, Dict, Any

from dateutil import parser as du_parser

__all__ = ['VulBinObject', 'IterVulBinObject']


class VulBinObject:
    """
    Every data object of this library is a child of this.
    Objects are built from keyword arguments, values get converted to the annotated types.
    You can always use the :const:`~vulbin.object.base.VulBinObject.to_dict()` method to turn that object to a dictionary.

    Annotated fields that are not passed in take the class level default, mutable defaults are copied per instance.

    Example:

    .. code-block:: python

        entry = QueueEntry(function_id='ab12:0x401130', state='pending')
        print(entry.state)  # QueueState.PENDING"""
    @staticmethod
    def _val_by_instance(instance, val):
        if val is None:
            return None
        if instance is Any:
            return val
        origin = instance.__origin__ if hasattr(instance, '__origin__') else None
        if instance == datetime:
            if isinstance(val, datetime):
                return val
            return du_parser.isoparse(val) if len(val) > 0 else None
        elif origin in (list, tuple, set):
            c = instance.__args__[0]
            return [VulBinObject._val_by_instance(c, x) for x in val]
        elif origin == dict:
            c1 = instance.__args__[0]
            c2 = instance.__args__[1]
            return {VulBinObject._val_by_instance(c1, x1): VulBinObject._val_by_instance(c2, x2) for x1, x2 in val.items()}
        elif origin == Union:
            # only the Optional[X] pattern is used
            c1 = instance.__args__[0]
            return VulBinObject._val_by_instance(c1, val)
        elif isinstance(instance, type) and isinstance(val, instance):
            return val
        elif issubclass(instance, VulBinObject):
            return instance(**val)
        else:
            return instance(val)

    @staticmethod
    def _dict_val_by_instance(instance, val, include_none_values):
        if val is None:
            return None
        if instance is None or instance is Any:
            return val.value if isinstance(val, Enum) else val
        origin = instance.__origin__ if hasattr(instance, '__origin__') else None
        if instance == datetime:
            return val.isoformat()
        elif origin in (list, tuple, set):
            c = instance.__args__[0]
            return [VulBinObject._dict_val_by_instance(c, x, include_none_values) for x in val]
        elif origin == dict:
            c1 = instance.__args__[0]
            c2 = instance.__args__[1]
            return {VulBinObject._dict_val_by_instance(c1, x1, include_none_values):
                    VulBinObject._dict_val_by_instance(c2, x2, include_none_values) for x1, x2 in val.items()}
        elif origin == Union:
            c1 = instance.__args__[0]
            return VulBinObject._dict_val_by_instance(c1, val, include_none_values)
        elif isinstance(val, VulBinObject):
            return val.to_dict(include_none_values)
        elif isinstance(val, Enum):
            return val.value
        return instance(val)

    @classmethod
    def _get_annotations(cls) -> Dict[str, Any]:
        d = {}
        for c in reversed(cls.mro()):
            d.update(**c.__dict__.get('__annotations__', {}))
        return d

    def to_dict(self, include_none_values: bool = False) -> dict:
        """build dict based on annotation types

        :param include_none_values: if fields that have None values should be included in the dictionary
        """
        d = {}
        annotations = self._get_annotations()
        for name, cls in annotations.items():
            if name[0] == '_':
                continue
            val = getattr(self, name, None)
            if val is None and not include_none_values:
                continue
            d[name] = VulBinObject._dict_val_by_instance(cls, val, include_none_values)
        return d

    def __init__(self, **kwargs):
        merged_annotations = self._get_annotations()
        unknown = set(kwargs.keys()) - set(merged_annotations.keys())
        if unknown:
            raise TypeError(f'{type(self).__name__} got unexpected fields: {", ".join(sorted(unknown))}')
        for name, cls in merged_annotations.items():
            if name not in kwargs.keys():
                default = getattr(type(self), name, None)
                if isinstance(default, (list, dict, set)):
                    self.__setattr__(name, copy.copy(default))
                continue
            self.__setattr__(name, VulBinObject._val_by_instance(cls, kwargs.get(name)))

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return self.to_dict(True) == other.to_dict(True)

    def __repr__(self):
        fields = ', '.join(f'{k}={v!r}' for k, v in self.to_dict().items())
        return f'{type(self).__name__}({fields})'


class IterVulBinObject(VulBinObject):
    """Special type of :const:`~vulbin.object.base.VulBinObject`.
       These carry a list (the field named by :code:`_iter_field`) you may want to directly iterate over,
       next to other useful fields.

       Example:

       .. code-block:: python

          bundle = store.fetch_context(function_id, 2048)
          print(bundle.total_tokens)
          for item in bundle:
              print(item.function_id, item.summary)"""

    _iter_field: str = 'data'

    def __iter__(self):
        data = getattr(self, self._iter_field, None)
        if not isinstance(data, list):
            raise ValueError(f'Object is missing {self._iter_field} attribute of type list')
        for i in data:
            yield i

    def __len__(self):
        return len(getattr(self, self._iter_field, None) or [])
