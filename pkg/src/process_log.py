import os, logging, getpass, atexit
from src.core import _CONFIG, _get_now

# --- CẤU HÌNH LOGGER ---
logger = logging.getLogger("dal_eeg")
logger.setLevel(logging.INFO)
logger.propagate = False

_state = {"temp_path": None}


def _merge_log_file(temp_path):
    """Gộp nội dung từ file temp vào file log chính tương ứng."""
    try:
        if os.path.exists(temp_path):
            final_path = temp_path.replace("-temp.log", ".log")
            with open(temp_path, "r", encoding="utf-8") as src:
                content = src.read()
            if content:
                with open(final_path, "a", encoding="utf-8") as dst:
                    dst.write(content)
            os.remove(temp_path)
            return True
    except OSError:
        pass
    return False


def _recover_orphaned_logs(log_dir, current):
    """Phục hồi các file log tạm bị bỏ rơi từ các phiên bị ngắt giữa chừng."""
    try:
        for f in os.listdir(log_dir):
            fpath = os.path.abspath(os.path.join(log_dir, f))
            if f.endswith("-temp.log") and fpath != current:
                _merge_log_file(fpath)
    except OSError:
        pass


def _finalize_logs():
    """Đóng handler và gộp log phiên hiện tại khi thoát."""
    for handler in logger.handlers[:]:
        handler.close()
        logger.removeHandler(handler)
    if _state["temp_path"]:
        _merge_log_file(_state["temp_path"])
        _state["temp_path"] = None


def setup_logging(log_dir=None):
    """Bật ghi log ra file theo ngày. Chỉ CLI gọi hàm này; dùng như thư viện thì không tạo file."""
    if logger.handlers:
        return _state["temp_path"]
    log_dir = log_dir or _CONFIG.LOG_DIR
    os.makedirs(log_dir, exist_ok=True)
    today = _get_now().strftime("%Y-%m-%d")
    temp_path = os.path.abspath(os.path.join(log_dir, f"log-{today}-temp.log"))
    _recover_orphaned_logs(log_dir, temp_path)

    h = logging.FileHandler(temp_path, encoding="utf-8")
    h.setFormatter(logging.Formatter('%(asctime)s | %(levelname)-7s | %(message)s'))
    logger.addHandler(h)
    _state["temp_path"] = temp_path
    atexit.register(_finalize_logs)
    return temp_path


def _current_user():
    try: return getpass.getuser()
    except (KeyError, OSError): return "unknown"


def log_action(action, details="", level=logging.INFO):
    user = _current_user()
    logger.log(level, f"{user:<12} | {action:<20} | {details}")
