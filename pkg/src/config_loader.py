"""
Configuration loader for the skiprun engine.
Handles loading of INI defaults for logging, benchmarking, evaluation and profiling.
"""
import os
import configparser
from typing import Dict, Any, Optional

DEFAULTS = {
    'log_level': 'INFO',
    'log_format': '%(asctime)s %(levelname)s %(name)s: %(message)s',
    'bench_prompt_len': '50',
    'bench_n_sequences': '1000',
    'bench_warmup_runs': '10',
    'bench_seed': '0',
    'eval_normalization': 'sum',
    'eval_workers': '1',
    'profile_n_prompts': '16',
    'profile_prompt_len': '32',
    'profile_seed': '0',
    'profile_workers': '1',
    'threads': '',
    'output_format': 'table',
}


class Config:
    """Configuration manager for the application."""

    def __init__(self, config_path: Optional[str] = None):
        # interpolation off: log_format holds literal %(...)s fields
        self.config = configparser.ConfigParser(interpolation=None)
        self.config_path = config_path or self._find_config_file()

        if self.config_path and os.path.exists(self.config_path):
            self.config.read(self.config_path)
        else:
            # Load defaults from template
            template_path = os.path.join(os.path.dirname(__file__), '..', 'config', 'config.ini.template')
            if os.path.exists(template_path):
                self.config.read(template_path)
        self._set_defaults()

    def _find_config_file(self) -> Optional[str]:
        """Find the config file in standard locations."""
        search_paths = [
            'config/config.ini',
            'config.ini',
            os.path.join(os.path.dirname(__file__), '..', 'config', 'config.ini')
        ]

        for path in search_paths:
            if os.path.exists(path):
                return path
        return None

    def _set_defaults(self):
        """Fill in every key the INI file left out."""
        for key, value in DEFAULTS.items():
            if not self.config.has_option('DEFAULT', key):
                self.config.set('DEFAULT', key, value)

    def get(self, key: str, fallback: Any = None) -> Any:
        """Get a configuration value."""
        try:
            value = self.config.get('DEFAULT', key, fallback=fallback)
            return self._parse_value(value)
        except (configparser.NoOptionError, configparser.NoSectionError):
            return self._parse_value(fallback)

    def _parse_value(self, value: Any) -> Any:
        """Parse configuration values to appropriate types."""
        if value is None:
            return None

        if isinstance(value, str):
            value = value.strip()
            if value == '':
                return None

            # Boolean values
            if value.lower() in ('true', 'yes', 'on'):
                return True
            elif value.lower() in ('false', 'no', 'off'):
                return False

            # Numeric values
            try:
                if '.' in value:
                    return float(value)
                else:
                    return int(value)
            except ValueError:
                pass

        return value

    def get_logging_config(self) -> Dict[str, Any]:
        """Get logging configuration."""
        return {
            'level': str(self.get('log_level', 'INFO')).upper(),
            'format': self.get('log_format', DEFAULTS['log_format']),
        }

    def get_bench_config(self) -> Dict[str, Any]:
        """Get benchmark defaults, keyed like BenchConfig fields."""
        return {
            'prompt_len': self.get('bench_prompt_len', 50),
            'n_sequences': self.get('bench_n_sequences', 1000),
            'warmup_runs': self.get('bench_warmup_runs', 10),
            'seed': self.get('bench_seed', 0),
        }

    def get_eval_config(self) -> Dict[str, Any]:
        """Get evaluation defaults."""
        return {
            'normalization': self.get('eval_normalization', 'sum'),
            'workers': self.get('eval_workers', 1),
        }

    def get_profile_config(self) -> Dict[str, Any]:
        """Get profiler defaults."""
        return {
            'n_prompts': self.get('profile_n_prompts', 16),
            'prompt_len': self.get('profile_prompt_len', 32),
            'seed': self.get('profile_seed', 0),
            'workers': self.get('profile_workers', 1),
        }

    def get_runtime_config(self) -> Dict[str, Any]:
        """Get thread pinning and output defaults."""
        return {
            'threads': self.get('threads'),
            'output_format': self.get('output_format', 'table'),
        }

# Global config instance
_config_instance = None

def get_config() -> Config:
    """Get the global configuration instance."""
    global _config_instance
    if _config_instance is None:
        _config_instance = Config()
    return _config_instance

def reload_config(config_path: Optional[str] = None) -> Config:
    """Reload configuration from file."""
    global _config_instance
    _config_instance = Config(config_path)
    return _config_instance
