from __future__ import annotations

import os
import textwrap
from pathlib import Path
from typing import IO, Any, Self

from pydantic import BaseModel, ConfigDict, PrivateAttr
from ruamel.yaml import YAML
from ruamel.yaml.comments import CommentedMap, CommentedSeq

from .env import substitute_env

YamlSource = str | os.PathLike | bytes | bytearray | IO[str] | IO[bytes]


def _round_trip_yaml() -> YAML:
    yaml = YAML(typ="rt")
    yaml.indent(mapping=2, sequence=4, offset=2)
    yaml.preserve_quotes = True
    return yaml


class YamlSettings(BaseModel):
    """Validated settings that load from and dump to YAML.

    Comments of the document a model was loaded from are kept on dump. With
    ``fill_default_comments=True`` the field descriptions are written as
    comments above keys that have none.
    """

    model_config = ConfigDict(extra="forbid")

    _doc: CommentedMap = PrivateAttr(default_factory=CommentedMap)

    @classmethod
    def from_yaml(cls, src: YamlSource, *, replace_env_vars: bool = False) -> Self:
        yaml = _round_trip_yaml()
        if isinstance(src, (str, os.PathLike)):
            with open(Path(src), "r", encoding="utf-8") as f:
                doc = yaml.load(f)
        elif isinstance(src, (bytes, bytearray)) or hasattr(src, "read"):
            doc = yaml.load(src)
        else:
            raise TypeError(f"Unsupported type for 'src': {type(src)}")

        if doc is None:
            doc = CommentedMap()
        if replace_env_vars:
            doc = substitute_env(doc)

        instance = cls.model_validate(doc)
        instance._attach(doc)
        return instance

    def _attach(self, doc: Any) -> None:
        self._doc = doc if isinstance(doc, CommentedMap) else CommentedMap()
        for name, value in self:
            child = self._doc.get(name)
            if isinstance(value, YamlSettings):
                value._attach(child)
            elif isinstance(value, list) and isinstance(child, CommentedSeq):
                for item, item_doc in zip(value, child):
                    if isinstance(item, YamlSettings):
                        item._attach(item_doc)

    def to_yaml(
        self,
        dst: str | os.PathLike | IO[str],
        *,
        fill_default_comments: bool = False,
        comment_width: int = 80,
    ) -> None:
        if isinstance(dst, (str, os.PathLike)):
            with open(Path(dst), "w", encoding="utf-8") as f:
                self.to_yaml(f, fill_default_comments=fill_default_comments, comment_width=comment_width)
            return

        self._sync(indent=0, fill_default_comments=fill_default_comments, comment_width=comment_width)
        _round_trip_yaml().dump(self._doc, dst)

    def _sync(self, *, indent: int, fill_default_comments: bool, comment_width: int) -> None:
        doc = self._doc
        for index, (name, value) in enumerate(self):
            if isinstance(value, YamlSettings):
                value._sync(
                    indent=indent + 2,
                    fill_default_comments=fill_default_comments,
                    comment_width=comment_width,
                )
                doc[name] = value._doc
            elif isinstance(value, list) and value and all(isinstance(v, YamlSettings) for v in value):
                seq = CommentedSeq()
                for item in value:
                    item._sync(
                        indent=indent + 4,
                        fill_default_comments=fill_default_comments,
                        comment_width=comment_width,
                    )
                    seq.append(item._doc)
                doc[name] = seq
            else:
                # Lists of scalars and other containers are rewritten as plain data;
                # item comments cannot be mapped onto a changed list.
                doc[name] = self.model_dump(mode="json", include={name})[name]

            if fill_default_comments:
                comment = self.get_comment(name, comment_width=comment_width)
                if comment is not None:
                    doc.yaml_set_comment_before_after_key(
                        name,
                        before=("\n" if index else "") + comment,
                        indent=indent,
                    )

    @classmethod
    def get_comment(cls, field_name: str, /, comment_width: int = 80) -> str | None:
        info = cls.model_fields.get(field_name)
        if info is None:
            raise ValueError(f"Field '{field_name}' not found in model '{cls.__name__}'")
        if info.description is None:
            return None
        return "\n".join(textwrap.wrap(info.description, width=comment_width))
