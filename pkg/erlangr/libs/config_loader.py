import os
import json
import logging

import yaml
import jsonschema

from erlangr.libs.utils import ObjDict
from erlangr.libs.errors import UsageError

logger = logging.getLogger(__name__)

SCHEMA_DIR = os.path.join(os.path.dirname(os.path.dirname(__file__)), 'schemas')
DATA_DIR = os.path.join(os.path.dirname(os.path.dirname(__file__)), 'data')

class CFG:
  Extension2FileType = {
    '.json': 'json',
    '.yaml': 'yaml',
    '.yml': 'yaml',
  }
  supported_extensions = Extension2FileType.keys()
  _schema_cache = {}

  @classmethod
  def load_config_as_objdict(cls, fn, filetype='auto', schema=None):
    configs = cls.load_config(fn, filetype, schema=schema)
    return ObjDict.convert_recursively(configs)

  @classmethod
  def load_config(cls, fn, filetype='auto', schema=None):
    if not os.path.exists(fn):
      raise UsageError(f'Config file not found: "{fn}"')
    with open(fn) as f:
      if filetype == 'auto':
        _, ext = os.path.splitext(fn)
        if ext not in CFG.Extension2FileType:
          raise UsageError(f'Unknown file extension "{ext}" for "{fn}"')
        filetype = CFG.Extension2FileType[ext]

      try:
        if filetype == 'json':
          configs = json.load(f)
        elif filetype == 'yaml':
          configs = yaml.safe_load(f)
        else:
          raise UsageError(f'Unknown file type "{filetype}"')
      except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise UsageError(f'Malformed config "{fn}": {e}')

    if schema is not None:
      cls.validate(configs, schema)
    return configs

  @classmethod
  def load_schema(cls, name):
    if name not in cls._schema_cache:
      with open(os.path.join(SCHEMA_DIR, f'{name}.schema.json')) as f:
        cls._schema_cache[name] = json.load(f)
    return cls._schema_cache[name]

  @classmethod
  def validate(cls, obj, schema):
    """Validate against a bundled schema name or a schema dict."""
    if isinstance(schema, str):
      schema = cls.load_schema(schema)
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(obj), key=lambda e: list(e.path))
    if errors:
      details = '; '.join(f'{"/".join(map(str, e.path)) or "<root>"}: {e.message}' for e in errors)
      raise UsageError(f'Schema validation failed: {details}')
    return obj

  @classmethod
  def data_path(cls, *parts):
    return os.path.join(DATA_DIR, *parts)
