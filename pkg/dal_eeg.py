#!/usr/bin/env python3
import sys, time, logging
from src.core import console, _handle_error, ConfigError, FormatError, DalEegError
from src.process_log import setup_logging, log_action
from src.process_input import parse_args
from src.process_menu import MenuManager


def main(argv=None, log_dir=None):
    """Exit code: 0 thành công, 1 lỗi cú pháp/cấu hình/định dạng, 2 lỗi khi chạy."""
    setup_logging(log_dir)
    try:
        return MenuManager().dispatch(parse_args(argv))
    except (ConfigError, FormatError) as e:
        _handle_error(f"❌ {e}")
        log_action("CONFIG_ERROR", str(e), logging.ERROR)
        return 1
    except DalEegError as e:
        _handle_error(f"❌ {type(e).__name__}: {e}")
        log_action("RUNTIME_ERROR", f"{type(e).__name__}: {e}", logging.ERROR)
        return 2
    except Exception as e:
        _handle_error(f"❌ Lỗi không mong đợi: {type(e).__name__}: {e}")
        log_action("RUNTIME_ERROR", f"{type(e).__name__}: {e}", logging.ERROR)
        return 2


if __name__ == "__main__":
    try:
        sys.exit(main())
    except (KeyboardInterrupt, EOFError):
        console.print("[bold yellow]⚠️ Đã nhận tín hiệu dừng (Ctrl+C). Dùng --resume để chạy tiếp.[/]")
        # Delay nhỏ để logger kịp flush buffer thông qua atexit
        time.sleep(0.5)
        sys.exit(2)
