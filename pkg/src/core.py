import os, datetime, json, hashlib, tempfile
from types import SimpleNamespace
from rich.console import Console
from config import *

# Khởi tạo cấu hình dùng chung (mọi hằng số viết hoa trong config.py)
_CONFIG = SimpleNamespace(**{k: v for k, v in globals().items() if k.isupper()})

console = Console(highlight=False)

# Múi giờ GMT+7 dùng chung cho log
VN_TZ = datetime.timezone(datetime.timedelta(hours=7))


class DalEegError(Exception):
    """Lỗi gốc của toolkit."""


class ConfigError(DalEegError):
    pass


class DimensionError(DalEegError):
    pass


class SpecError(DalEegError):
    pass


class FormatError(DalEegError):
    pass


class DivergenceError(DalEegError):
    pass


class PairingError(ConfigError):
    pass


class UsageError(ConfigError):
    """Sai cú pháp dòng lệnh."""


class LeakageError(DalEegError):
    pass


class StatsError(DalEegError):
    pass


class NumericalError(DalEegError):
    pass


def _get_now():
    return datetime.datetime.now(VN_TZ)


def _project_path(rel):
    """Đường dẫn tính từ thư mục gốc dự án (nơi có config.py)."""
    return os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), rel)


def _output_root():
    return os.environ.get(_CONFIG.OUTPUT_ENV_VAR) or _CONFIG.OUTPUT_ROOT


def _handle_error(msg):
    console.print(msg, style=_CONFIG.COLOR_ERROR)


def _canonical_json(obj):
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _sha256(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _atomic_write(path, data):
    """Ghi file qua file tạm rồi rename để không bao giờ để lại file dở dang."""
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    mode = "wb" if isinstance(data, (bytes, bytearray)) else "w"
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": ""})) as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp): os.remove(tmp)
        raise


def _ensure_empty_dir(path, force=False):
    """Từ chối ghi vào thư mục đã có dữ liệu trừ khi có --force."""
    if os.path.isdir(path) and os.listdir(path) and not force:
        raise ConfigError(f"Thư mục đầu ra '{path}' không trống (dùng --force để ghi đè)")
    os.makedirs(path, exist_ok=True)
