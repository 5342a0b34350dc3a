import hashlib
import json
from typing import Any, Dict, Type, TypeVar

from pydantic import BaseModel, ValidationError

from utils.errors import ConfigError

SchemaT = TypeVar("SchemaT", bound="Schema")


class Schema(BaseModel):
    """Base for every typed configuration and record object"""

    class Config:
        validate_assignment = True
        use_enum_values = False

    @classmethod
    def build(cls: Type[SchemaT], data: Dict[str, Any] = None, **fields: Any) -> SchemaT:
        """
        Construct the model, turning pydantic validation failures into ConfigError

        Args:
            data: Optional mapping of field values
            **fields: Field values, applied over ``data``

        Returns:
            The validated model
        """
        values = dict(data or {})
        values.update(fields)
        try:
            return cls.parse_obj(values)
        except ValidationError as e:
            problems = "; ".join(
                f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()
            )
            raise ConfigError(f"Invalid {cls.__name__}: {problems}") from e

    def digest(self) -> str:
        """Stable sha256 of the model content"""
        payload = json.dumps(json.loads(self.json()), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()
