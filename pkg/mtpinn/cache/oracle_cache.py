import logging
import threading
from typing import Callable, Optional, Tuple

from cachetools import LRUCache

logger = logging.getLogger(__name__)

CacheKey = Tuple[float, float, float]


class OracleCache:
    """Memoizes the closed-form tanh^2 integral, which depends only on (tau, kappa, sigma)"""

    def __init__(self, max_size: int = 65536):
        """
        Initialize oracle cache

        Args:
            max_size: Maximum number of integrals to keep
        """
        self._cache = LRUCache(maxsize=max_size)
        self._lock = threading.RLock()
        self.hits = 0
        self.misses = 0

    @staticmethod
    def _generate_cache_key(tau: float, kappa: float, sigma: float) -> CacheKey:
        return (float(tau), float(kappa), float(sigma))

    def get(self, tau: float, kappa: float, sigma: float) -> Optional[float]:
        key = self._generate_cache_key(tau, kappa, sigma)
        with self._lock:
            value = self._cache.get(key)
            if value is None:
                self.misses += 1
            else:
                self.hits += 1
            return value

    def set(self, tau: float, kappa: float, sigma: float, value: float):
        key = self._generate_cache_key(tau, kappa, sigma)
        with self._lock:
            self._cache[key] = value

    def get_or_compute(self, tau: float, kappa: float, sigma: float, compute: Callable[[], float]) -> float:
        """Return the cached integral or compute, store and return it"""
        cached = self.get(tau, kappa, sigma)
        if cached is not None:
            return cached
        value = compute()
        self.set(tau, kappa, sigma, value)
        return value

    def clear_all(self) -> int:
        with self._lock:
            count = len(self._cache)
            self._cache.clear()
            self.hits = 0
            self.misses = 0
            logger.info(f"Cleared {count} integrals from oracle cache")
            return count

    def get_cache_stats(self) -> dict:
        with self._lock:
            return {
                "current_size": len(self._cache),
                "max_size": self._cache.maxsize,
                "hits": self.hits,
                "misses": self.misses,
            }


# Global oracle cache instance
oracle_cache = OracleCache()
