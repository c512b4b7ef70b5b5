#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
配置管理器 - 读取JSON配置、合并默认值、应用命令行覆盖并按模式校验
"""

import copy
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """配置文件缺失、无法解析或不符合模式"""


COMMANDS = ("classify", "eigen", "capacity", "aap", "improve", "probe")

DEFAULTS: Dict[str, Any] = {
    "grid": {"dim": 1, "extents": [[0.0, 1.0]], "n": 255, "levels": 3, "max_nodes": 4_000_000},
    "potential": {"variant": "constant", "c": 0.0},
    "domain": None,
    "K": None,
    "eigen": {"tol": 1e-8, "maxit": 10_000},
    "classify": {
        "slope_critical": 1.5,
        "slope_subcritical": 0.5,
        "gap_threshold": 1e-3,
        "critical_factor": 10.0,
        "zero_tol": 1e-8,
        "fit_levels": 3,
        "shift": None,
        "shift_tol": 1e-12,
    },
    "capacity": {"omega": 1.5, "tol": 1e-10, "mazya": False, "min_cells": 4, "mazya_tol": 0.05},
    "aap": {"m_levels": 2, "truncations": [1.0, 10.0, 100.0], "gap_tol": 0.05},
    "improve": {"u1": {"profile": "one"}, "u2": {"profile": "linear", "axis": 0}, "gap_tol": 0.05},
    "probe": {"kind": "oscillation", "c": 0.0625, "alpha": -0.9, "beta": -0.2,
              "epsilons": [1e-2, 1e-3, 1e-4, 1e-5], "dim": 3, "tol": 0.03, "U": None, "seed": 0},
    "export": {"vector": None, "format": "grid-text", "axis": 0},
}

# 叶子键的类型约束：None 表示允许 null
NUMBER = (int, float)
SCHEMA: Dict[str, Any] = {
    "grid": {"dim": int, "extents": list, "n": (int, list), "levels": int, "max_nodes": int},
    "potential": dict,
    "domain": (dict, type(None)),
    "K": (list, type(None)),
    "eigen": {"tol": NUMBER, "maxit": int},
    "classify": {
        "slope_critical": NUMBER, "slope_subcritical": NUMBER, "gap_threshold": NUMBER,
        "critical_factor": NUMBER, "zero_tol": NUMBER, "fit_levels": int,
        "shift": (str, int, float, type(None)), "shift_tol": NUMBER,
    },
    "capacity": {"omega": NUMBER, "tol": NUMBER, "mazya": bool, "min_cells": int, "mazya_tol": NUMBER},
    "aap": {"m_levels": int, "truncations": list, "gap_tol": NUMBER},
    "improve": {"u1": dict, "u2": dict, "gap_tol": NUMBER},
    "probe": {"kind": str, "c": NUMBER, "alpha": NUMBER, "beta": NUMBER, "epsilons": list,
              "dim": int, "tol": NUMBER, "U": (list, type(None)), "seed": int},
    "export": {"vector": (str, type(None)), "format": str, "axis": int},
}


def home_dir() -> Path:
    """日志与默认输出目录，SPECTRAGAP_HOME 可覆盖"""
    value = os.environ.get("SPECTRAGAP_HOME")
    return Path(value).expanduser() if value else Path.home() / ".spectragap"


def deep_merge(base: Dict, update: Dict) -> Dict:
    merged = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def parse_value(text: str) -> Any:
    """覆盖值优先按JSON解析，失败时作为字符串"""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _check(value: Any, rule: Any, path: str):
    if isinstance(rule, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: 应为对象，收到 {type(value).__name__}")
        for key, sub in value.items():
            if key not in rule:
                raise ConfigError(f"{path}.{key}: 未知的配置键")
            _check(sub, rule[key], f"{path}.{key}")
        return
    types = rule if isinstance(rule, tuple) else (rule,)
    # bool 是 int 的子类，数值键不接受布尔值
    if isinstance(value, bool) and bool not in types:
        raise ConfigError(f"{path}: 类型错误，收到布尔值")
    if not isinstance(value, types):
        names = "/".join(t.__name__ for t in types)
        raise ConfigError(f"{path}: 应为 {names}，收到 {type(value).__name__}")


def _check_user_document(data: Dict[str, Any]):
    """在合并默认值之前检查用户文档中的判别键"""
    if "potential" not in data:
        return
    block = data["potential"]
    if not isinstance(block, dict):
        raise ConfigError(f"potential: 应为对象，收到 {type(block).__name__}")
    if "variant" not in block:
        raise ConfigError("potential.variant: 缺少判别键")
    if not isinstance(block["variant"], str):
        raise ConfigError("potential.variant: 应为字符串")


class ConfigManager:
    """配置管理器类"""

    def __init__(self, config_path: Optional[str] = None):
        self.config_file = Path(config_path) if config_path else None
        self.config: Dict[str, Any] = copy.deepcopy(DEFAULTS)

    def load_config(self) -> Dict[str, Any]:
        """读取配置文件并合并到默认值之上"""
        if self.config_file is None:
            return self.config
        if not self.config_file.exists():
            raise ConfigError(f"配置文件不存在: {self.config_file}")
        try:
            with open(self.config_file, "r", encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"加载配置失败: {e}")
        if not isinstance(data, dict):
            raise ConfigError("配置文件顶层必须是对象")
        _check_user_document(data)
        self.config = deep_merge(DEFAULTS, data)
        if "potential" in data:
            # 势是带判别键的联合类型，整块替换默认值
            self.config["potential"] = copy.deepcopy(data["potential"])
        logger.debug("已加载配置 %s", self.config_file)
        return self.config

    def apply_overrides(self, pairs: Iterable[str]) -> Dict[str, Any]:
        """应用 key.path=value 覆盖，后者优先"""
        for pair in pairs or []:
            if "=" not in pair:
                raise ConfigError(f"--set {pair}: 需要 key=value 形式")
            key, text = pair.split("=", 1)
            parts = [p for p in key.strip().split(".") if p]
            if not parts:
                raise ConfigError(f"--set {pair}: 键为空")
            node = self.config
            for part in parts[:-1]:
                if not isinstance(node.get(part), dict):
                    node[part] = {}
                node = node[part]
            node[parts[-1]] = parse_value(text.strip())
            logger.debug("覆盖 %s = %r", key, node[parts[-1]])
        return self.config

    def validate(self) -> Dict[str, Any]:
        """按模式校验，错误信息带键路径"""
        for key in self.config:
            if key not in SCHEMA:
                raise ConfigError(f"{key}: 未知的配置键")
        for key, rule in SCHEMA.items():
            _check(self.config.get(key), rule, key)
        grid = self.config["grid"]
        if grid["dim"] not in (1, 2, 3):
            raise ConfigError("grid.dim: 必须是1、2或3")
        if "variant" not in self.config["potential"]:
            raise ConfigError("potential.variant: 缺少判别键")
        return self.config

    def get(self, dotted: str, default: Any = None) -> Any:
        node: Any = self.config
        for part in dotted.split("."):
            if not isinstance(node, dict) or part not in node:
                return default
            node = node[part]
        return node

    def save_config(self, path) -> Path:
        """保存已解析的配置（用于复现）"""
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", encoding="utf-8") as f:
                json.dump(self.config, f, ensure_ascii=False, indent=2, sort_keys=True)
        except OSError as e:
            raise ConfigError(f"保存配置失败: {e}")
        return path
