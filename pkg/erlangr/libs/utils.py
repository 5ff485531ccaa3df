import os
import csv
import json
import math
import traceback
from typing import Any, Iterable, Sequence

import numpy as np

SIGNIFICANT_DIGITS = 10

def ensure_folder_exists(fn):
  folder = os.path.dirname(fn)
  if folder != '':
    os.makedirs(folder, exist_ok=True)

def format_exception(exc):
  return ''.join(traceback.format_exception_only(type(exc), exc)).strip()

def format_float(value, digits=SIGNIFICANT_DIGITS):
  if isinstance(value, (bool, np.bool_)):
    return str(bool(value)).lower()
  if isinstance(value, (int, np.integer)):
    return str(int(value))
  value = float(value)
  if math.isnan(value) or math.isinf(value):
    return str(value)
  return f'{value:.{digits}g}'

def round_significant(obj, digits=SIGNIFICANT_DIGITS):
  """Round every float in a nested dict/list structure to `digits` significant digits."""
  if isinstance(obj, dict):
    return {k: round_significant(v, digits) for k, v in obj.items()}
  if isinstance(obj, (list, tuple)):
    return [round_significant(v, digits) for v in obj]
  if isinstance(obj, np.ndarray):
    return round_significant(obj.tolist(), digits)
  if isinstance(obj, (bool, np.bool_)):
    return bool(obj)
  if isinstance(obj, (int, np.integer)):
    return int(obj)
  if isinstance(obj, (float, np.floating)):
    value = float(obj)
    if not math.isfinite(value):
      return None
    return float(f'{value:.{digits}g}')
  return obj

def dump_json(obj, fn=None, digits=SIGNIFICANT_DIGITS):
  text = json.dumps(round_significant(obj, digits), indent=2)
  if fn is not None:
    ensure_folder_exists(fn)
    with open(fn, 'w') as f:
      f.write(text + '\n')
  return text

def write_csv(fn, header: Sequence[str], rows: Iterable[Sequence[Any]], float_format=format_float):
  """Write rows with `.` decimals regardless of locale; `fn=None` only returns the text."""
  lines = [','.join(header)]
  for row in rows:
    lines.append(','.join(
      float_format(v) if isinstance(v, (int, float, np.integer, np.floating)) else str(v)
      for v in row
    ))
  text = '\n'.join(lines) + '\n'
  if fn is not None:
    ensure_folder_exists(fn)
    with open(fn, 'w', newline='') as f:
      f.write(text)
  return text

def read_csv_rows(fn):
  with open(fn, newline='') as f:
    return list(csv.DictReader(f))

def compensated_sum(values):
  """Exact-rounded sum, accumulated in descending-magnitude order."""
  values = np.asarray(values, dtype=float).ravel()
  order = np.argsort(-np.abs(values), kind='stable')
  return math.fsum(values[order])

class ObjDict(dict):
  def __init__(self, *args, **kwargs):
    super().__init__(*args, **kwargs)

  def __getattribute__(self, __name: str) -> Any:
    try:
      return super().__getattribute__(__name)
    except AttributeError:
      try:
        return self[__name]
      except KeyError:
        raise AttributeError(__name)

  def __setattr__(self, __name: str, __value: Any) -> None:
    self[__name] = __value

  def __delattr__(self, __name: str) -> None:
    del self[__name]

  @classmethod
  def convert_recursively(cls, _v):
    if isinstance(_v, dict):
      objdict = ObjDict(_v)
      for k, v in _v.items():
        objdict[k] = cls.convert_recursively(v)
    elif type(_v) is list:
      objdict = [cls.convert_recursively(v) for v in _v]
    else:
      objdict = _v
    return objdict

  @classmethod
  def merge_recursively(cls, obj1, obj2):
    for key, value in obj2.items():
      if key in obj1 and isinstance(obj1[key], dict) and isinstance(value, dict):
        cls.merge_recursively(obj1[key], value)
      else:
        obj1[key] = value
    return obj1

  @classmethod
  def set_defaults(cls, obj1, obj2):
    obj2 = ObjDict.convert_recursively(obj2)
    for key, value in obj2.items():
      if key in obj1:
        if isinstance(obj1[key], dict) and isinstance(value, dict):
          cls.set_defaults(obj1[key], value)
      else:
        obj1[key] = value
    return obj1
