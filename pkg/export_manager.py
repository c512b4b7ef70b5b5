#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
导出管理器 - 支持导出为JSON报告、网格函数文本、CSV剖面格式
"""

import json
import logging
import math
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from mesh import GridFunction, format_grid_function

logger = logging.getLogger(__name__)

FORMATS = ("json", "grid-text", "csv-profile")


class ExportError(RuntimeError):
    """目标路径不可写"""


def _plain(value: Any) -> Any:
    """转换为可JSON序列化的普通对象；非有限浮点数写为 null"""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def format_float(value: float) -> str:
    """%.17g；整数值补 ".0" 以便回读时仍为浮点数"""
    text = "%.17g" % value
    if text.lstrip("-").isdigit():
        text += ".0"
    return text


def _emit(value: Any, depth: int) -> str:
    pad = "  " * (depth + 1)
    end = "  " * depth
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return format_float(value)
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, list):
        if not value:
            return "[]"
        items = ",\n".join(pad + _emit(v, depth + 1) for v in value)
        return "[\n" + items + "\n" + end + "]"
    if isinstance(value, dict):
        if not value:
            return "{}"
        items = ",\n".join(pad + json.dumps(k, ensure_ascii=False) + ": " + _emit(value[k], depth + 1)
                           for k in sorted(value))
        return "{\n" + items + "\n" + end + "}"
    raise ExportError(f"报告中含有无法序列化的对象: {type(value).__name__}")


def dumps_report(report: dict) -> str:
    """稳定的键顺序；浮点数按 %.17g 写出，非有限值写为 null"""
    return _emit(_plain(report), 0) + "\n"


def profile_rows(fn: GridFunction, axis: int = 0, through=None):
    """
    沿某个坐标轴、穿过给定点（默认盒子中心）的节点线

    Returns:
        [(坐标, 值)]
    """
    grid = fn.grid
    if not 0 <= axis < grid.dim:
        raise ValueError(f"剖面轴 {axis} 超出维数 {grid.dim}")
    point = grid.center() if through is None else tuple(through)
    array = fn.as_array()
    index = []
    for k in range(grid.dim):
        if k == axis:
            index.append(slice(None))
        else:
            nodes = grid.axis_nodes(k)
            index.append(int(np.argmin(np.abs(nodes - point[k]))))
    line = array[tuple(index)]
    return list(zip(grid.axis_nodes(axis).tolist(), line.tolist()))


class ExportManager:
    """导出管理器类"""

    def __init__(self, export_dir: Optional[Union[str, Path]] = None):
        self.export_dir = Path(export_dir) if export_dir else Path.cwd()

    def _target(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        if not path.is_absolute():
            path = self.export_dir / path
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ExportError(f"无法创建导出目录 {path.parent}: {e}")
        return path

    def _write(self, path: Path, text: str) -> Path:
        try:
            with open(path, "w", encoding="utf-8", newline="\n") as f:
                f.write(text)
        except OSError as e:
            raise ExportError(f"导出失败: {e}")
        logger.debug("已导出 %s", path)
        return path

    def export_report(self, report: dict, path) -> Path:
        """
        导出JSON报告

        Args:
            report: 报告字典
            path: 文件路径

        Returns:
            导出的文件路径
        """
        return self._write(self._target(path), dumps_report(report))

    def export_grid_text(self, fn: GridFunction, path) -> Path:
        return self._write(self._target(path), format_grid_function(fn))

    def export_csv_profile(self, fn: GridFunction, path, axis: int = 0, through=None) -> Path:
        """导出 (坐标, 值) 剖面，首行为列名"""
        lines = ["coordinate,value"]
        lines.extend("%.17g,%.17g" % (x, v) for x, v in profile_rows(fn, axis, through))
        return self._write(self._target(path), "\n".join(lines) + "\n")

    def export(self, obj, path, fmt: str = "json", axis: int = 0) -> Path:
        """按格式分派"""
        if fmt not in FORMATS:
            raise ValueError(f"未知的导出格式 '{fmt}'，可选 {', '.join(FORMATS)}")
        if fmt == "json":
            if not isinstance(obj, dict):
                raise ValueError("json 导出需要报告字典")
            return self.export_report(obj, path)
        if not isinstance(obj, GridFunction):
            raise ValueError(f"{fmt} 导出需要网格函数")
        if fmt == "grid-text":
            return self.export_grid_text(obj, path)
        return self.export_csv_profile(obj, path, axis=axis)

    def export_supersolution(self, u: GridFunction, meta: dict, path) -> Path:
        """网格函数文本加附属 <path>.meta.json"""
        target = self.export_grid_text(u, path)
        self.export_report(meta, target.with_name(target.name + ".meta.json"))
        return target
