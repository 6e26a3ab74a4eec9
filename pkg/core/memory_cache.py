#!/usr/bin/env python3
"""
乘子表缓存 - 使用 cachetools 实现
- 第一层: 内存 TTLCache (按 (网格, 核剖面哈希, ε, 路径) 键)
- 第二层: 可选的磁盘目录 (.npy 文件)
- 缓存中的数组只读, 可在线程间共享
"""

import hashlib
import logging
import os
import threading
from typing import Dict, Optional

import numpy as np
from cachetools import TTLCache

try:
    from config import CACHE_CONFIG
except ImportError:
    CACHE_CONFIG = {'multiplier_maxsize': 64, 'multiplier_ttl_hours': 12, 'disk_dir': ''}

logger = logging.getLogger(__name__)


class MultiplierCache:
    """
    谱乘子缓存管理器
    - 内存优先, 磁盘为持久层
    - 线程安全
    """

    def __init__(self, maxsize: Optional[int] = None, ttl_hours: Optional[float] = None,
                 disk_dir: Optional[str] = None):
        maxsize = maxsize or CACHE_CONFIG['multiplier_maxsize']
        ttl_hours = ttl_hours or CACHE_CONFIG['multiplier_ttl_hours']
        self.multipliers = TTLCache(maxsize=maxsize, ttl=ttl_hours * 3600)
        self.disk_dir = CACHE_CONFIG.get('disk_dir', '') if disk_dir is None else disk_dir

        self._lock = threading.RLock()
        self._stats = {
            'hits': 0,
            'disk_hits': 0,
            'misses': 0,
        }

    def _disk_path(self, key: str) -> Optional[str]:
        if not self.disk_dir:
            return None
        return os.path.join(self.disk_dir, f"multiplier_{key}.npy")

    def get(self, key: str) -> Optional[np.ndarray]:
        """
        获取乘子表

        Args:
            key: 缓存键 (generate_key 生成)

        Returns:
            只读数组或 None
        """
        with self._lock:
            try:
                value = self.multipliers[key]
                self._stats['hits'] += 1
                return value
            except KeyError:
                pass

        path = self._disk_path(key)
        if path and os.path.exists(path):
            try:
                value = np.load(path)
            except (OSError, ValueError) as e:
                logger.warning(f"[乘子缓存] 读取 {path} 失败: {e}")
            else:
                value.flags.writeable = False
                with self._lock:
                    self.multipliers[key] = value
                    self._stats['disk_hits'] += 1
                return value

        with self._lock:
            self._stats['misses'] += 1
        return None

    def set(self, key: str, value: np.ndarray) -> np.ndarray:
        """
        写入乘子表(内存 + 磁盘)

        Returns:
            写入后的只读数组
        """
        value = np.array(value)
        value.flags.writeable = False
        with self._lock:
            self.multipliers[key] = value

        path = self._disk_path(key)
        if path:
            try:
                os.makedirs(self.disk_dir, exist_ok=True)
                np.save(path, value)
            except OSError as e:
                logger.warning(f"[乘子缓存] 写入 {path} 失败: {e}")
        return value

    def clear(self):
        """清空内存层"""
        with self._lock:
            self.multipliers.clear()

    def get_stats(self) -> Dict:
        """获取缓存统计信息"""
        with self._lock:
            total = self._stats['hits'] + self._stats['disk_hits'] + self._stats['misses']
            hit_rate = ((self._stats['hits'] + self._stats['disk_hits']) / total * 100) if total > 0 else 0
            return {
                **self._stats,
                'hit_rate': round(hit_rate, 2),
                'size': len(self.multipliers),
            }

    @staticmethod
    def generate_key(*args) -> str:
        """
        生成缓存键

        Args:
            *args: 任意参数 (浮点数用 repr 保证精确)

        Returns:
            MD5 哈希键
        """
        key_str = ':'.join(repr(arg) for arg in args)
        return hashlib.md5(key_str.encode()).hexdigest()


# 全局缓存实例
_multiplier_cache = None
_cache_lock = threading.Lock()


def get_multiplier_cache() -> MultiplierCache:
    """获取全局乘子缓存实例(单例模式)"""
    global _multiplier_cache
    if _multiplier_cache is None:
        with _cache_lock:
            if _multiplier_cache is None:
                _multiplier_cache = MultiplierCache()
    return _multiplier_cache
