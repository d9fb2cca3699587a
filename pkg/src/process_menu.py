import os, json, shlex, shutil, getpass, logging
from rich.table import Table
from rich.panel import Panel
from rich.align import Align
from rich import box
from src.core import (
    _CONFIG, console, _get_now, _handle_error, _ensure_empty_dir, _atomic_write, _canonical_json,
    ConfigError, FormatError, PairingError, DalEegError,
)
from src.process_file import FileManager
from src.process_log import log_action
from src.process_data import generate_subject_dataset
from src.process_signal import preprocess_dataset
from src.process_eval import run_all, read_results
from src.process_report import (
    write_report, write_run_echo, summarize_methods, accuracy_columns, infer_n_classes, CONFIG_ECHO_FILE, STAT_FILE,
)
from src.process_stats import build_stat_report, load_accuracy_table
from src.process_words import load_word_pool, select_words, min_pair_score
from src.process_input import load_run_config, cli_overrides, parse_args
from src.utils import (
    _gradcheck_suite_util, _gradcheck_table, _accuracy_table, _stats_table, _words_table, _block_done_util,
)

RESULTS_FILE = "results.csv"
CHECKPOINT_DIR = "checkpoints"


def _dataset_meta(ds):
    return {"subject_id": ds.subject_id, "seeds": dict(ds.seeds), "generator_version": int(ds.version)}


class MenuManager:
    def __init__(self):
        self.file_mgr = FileManager()

    def commands(self):
        """Registry lệnh: tên → (handler, mô tả)."""
        return {
            "simulate": (self.cmd_simulate, "[green]Sinh dữ liệu EEG tổng hợp[/]"),
            "run": (self.cmd_run, "[green]Chạy ma trận phương pháp × điều kiện[/]"),
            "report": (self.cmd_report, "[cyan]Lập báo cáo từ results.csv[/]"),
            "stats": (self.cmd_stats, "[cyan]Chỉ chạy kiểm định thống kê[/]"),
            "gradcheck": (self.cmd_gradcheck, "[yellow]Kiểm tra gradient[/]"),
            "words": (self.cmd_words, "[yellow]Chọn từ khác biệt nhất[/]"),
        }

    def dispatch(self, args):
        """Chạy lệnh đã parse; trả về exit code (0 thành công, 2 có fold thất bại / kiểm tra không đạt)."""
        if not args.command:
            return self.run_menu()
        handler, _ = self.commands()[args.command]
        log_action("COMMAND", args.command)
        return handler(args)

    def run_menu(self):
        """Menu khi không có lệnh: chọn lệnh rồi nhập tham số như trên dòng lệnh."""
        options = self.commands()
        while True:
            header = (f"[bold white]🧠 {_CONFIG.TOOLKIT_NAME.upper()} {_CONFIG.TOOLKIT_VERSION} 🧠[/]\n"
                      f"[{_CONFIG.COLOR_INFO}]User: {getpass.getuser()} | {_get_now().strftime('%d/%m/%Y %H:%M')}[/]")
            console.print(Panel(Align.center(header), box=box.DOUBLE, border_style=_CONFIG.COLOR_HEADER))
            opt_table = Table(show_header=False, box=box.ROUNDED, border_style=_CONFIG.COLOR_MENU)
            for k, (_, label) in options.items():
                opt_table.add_row(f"[bold cyan]{k}[/]", label)
            opt_table.add_row("[bold red]/exit[/]", "Thoát")
            console.print(Panel(opt_table, title=f"[bold {_CONFIG.COLOR_MENU}]📋 LỆNH[/]",
                                border_style=_CONFIG.COLOR_MENU, expand=False))
            ch = console.input("👉 Chọn lệnh: ").strip()
            if ch in ("/exit", "exit", "0", ""):
                return 0
            if ch not in options:
                _handle_error(f"❌ Lệnh không hợp lệ: '{ch}'")
                continue
            extra = console.input("⚙️ Tham số (Enter để bỏ qua): ").strip()
            try:
                args = parse_args([ch] + shlex.split(extra))
                code = self.dispatch(args)
                console.print(f"[{_CONFIG.COLOR_SUCCESS if code == 0 else _CONFIG.COLOR_WARNING}]↩ exit code {code}[/]")
            except DalEegError as e:
                _handle_error(f"❌ {e}")
                log_action("ERROR", str(e), logging.ERROR)

    # --- Lệnh ---

    def cmd_simulate(self, args):
        rc = load_run_config(args.config, cli_overrides(args))
        _ensure_empty_dir(args.out, args.force)
        for stale in self.file_mgr.list_datasets(args.out):
            shutil.rmtree(stale)
            log_action("REMOVE_DATASET", stale)
        metas = []
        with console.status(f"[{_CONFIG.COLOR_INFO}]Đang sinh dữ liệu cho {rc.gen.n_subjects} người...[/]"):
            for s in range(1, rc.gen.n_subjects + 1):
                ds = generate_subject_dataset(rc.gen, s)
                self.file_mgr.write_dataset(ds, os.path.join(args.out, ds.subject_id))
                metas.append(_dataset_meta(ds))
                console.print(f"  [{_CONFIG.COLOR_INFO}]{ds.subject_id}[/]: "
                              f"{ds.imagined.shape[0]} imagined + {ds.overt.shape[0]} overt, {ds.channels}×{ds.samples}")
        write_run_echo(args.out, rc, metas, "simulate")
        console.print(f"[{_CONFIG.COLOR_SUCCESS}]✅ Đã ghi {len(metas)} dataset vào {args.out}[/]")
        return 0

    def _check_datasets(self, dirs, rc):
        """Đọc từng dataset một lần để kiểm tra khớp cấu hình và ghép cặp trước khi huấn luyện."""
        needs_overt = "w" in rc.run.conditions
        metas = []
        for d in dirs:
            ds = self.file_mgr.read_dataset(d)
            found = {"gen.channels": ds.channels, "gen.samples": ds.samples, "gen.fs": ds.fs, "gen.words": ds.words}
            want = {"gen.channels": rc.gen.channels, "gen.samples": rc.gen.samples, "gen.fs": rc.gen.fs,
                    "gen.words": list(rc.gen.words)}
            for key in found:
                if found[key] != want[key]:
                    raise ConfigError(f"{ds.subject_id}: {key}={found[key]} khác cấu hình ({want[key]}); "
                                      f"dùng --config của lần simulate")
            if needs_overt:
                try:
                    ds.validate_pairing()
                except PairingError as e:
                    raise PairingError(f"{ds.subject_id}: điều kiện 'w' cần bảng ghép overt hợp lệ ({e})")
            metas.append(_dataset_meta(ds))
        return metas

    def cmd_run(self, args):
        rc = load_run_config(args.config, cli_overrides(args))
        dirs = self.file_mgr.list_datasets(args.data)
        if not dirs:
            raise FormatError(f"Thư mục '{args.data}' không có dataset nào (chạy simulate trước)")
        results_path = os.path.join(args.out, RESULTS_FILE)
        echo = os.path.join(args.out, CONFIG_ECHO_FILE)
        if args.resume and os.path.exists(echo):
            with open(echo, "r", encoding="utf-8") as f:
                if f.read() != rc.to_json():
                    raise ConfigError(f"--resume: cấu hình khác với {echo}")
        elif not args.resume:
            _ensure_empty_dir(args.out, args.force)
        os.makedirs(args.out, exist_ok=True)
        metas = self._check_datasets(dirs, rc)
        write_run_echo(args.out, rc, metas, "run")

        needs_overt = "w" in rc.run.conditions
        prepared = (preprocess_dataset(self.file_mgr.read_dataset(d), rc.prep, with_overt=needs_overt) for d in dirs)
        n_blocks = len(dirs) * len(rc.run.methods) * len(rc.run.conditions)
        console.print(f"[{_CONFIG.COLOR_INFO}]▶ {len(dirs)} người × {len(rc.run.methods)} phương pháp × "
                      f"{len(rc.run.conditions)} điều kiện = {n_blocks} khối, mỗi khối {rc.cv.k}×{rc.cv.repeats} fold[/]")
        results = run_all(prepared, rc.run, rc.cv, rc.train, rc.model, rc.baseline, results_path,
                          os.path.join(args.out, CHECKPOINT_DIR), resume=args.resume, on_block=_block_done_util)
        failed = sum(not r.ok for r in results)
        log_action("RUN_DONE", f"{len(results)} fold, {failed} thất bại -> {results_path}")
        if failed:
            console.print(f"[{_CONFIG.COLOR_ERROR}]⚠️ {failed}/{len(results)} fold thất bại (xem log)[/]")
            return 2
        console.print(f"[{_CONFIG.COLOR_SUCCESS}]✅ {len(results)} fold → {results_path}[/]")
        return 0

    def cmd_report(self, args):
        rc = load_run_config(args.config, cli_overrides(args))
        payload, stat = write_report(args.results, args.out, rc.gen.words)
        console.print(_accuracy_table(payload))
        if stat:
            console.print(_stats_table(stat))
        else:
            console.print(f"[{_CONFIG.COLOR_WARNING}]⚠️ Bỏ qua thống kê: {payload['stats']['skipped']}[/]")
        console.print(f"[{_CONFIG.COLOR_SUCCESS}]✅ Báo cáo → {args.out}[/]")
        return 0

    def cmd_stats(self, args):
        load_run_config(args.config, cli_overrides(args))
        if args.reference:
            _, columns = load_accuracy_table()
            methods = None
        else:
            results = read_results(args.results, infer_n_classes(args.results))
            summaries = summarize_methods(results)
            _, columns = accuracy_columns(summaries)
            methods = list(summaries)
        stat = build_stat_report(columns, methods)
        console.print(_stats_table(stat))
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            _atomic_write(os.path.join(args.out, STAT_FILE), _canonical_json(stat.to_dict()))
        log_action("STATS", f"{len(stat.ordered_tests())} kiểm định")
        return 0

    def cmd_gradcheck(self, args):
        with console.status(f"[{_CONFIG.COLOR_INFO}]Đang kiểm tra gradient...[/]"):
            rows, counts = _gradcheck_suite_util(args.samples, args.channels, seed=args.seed or 0)
        console.print(_gradcheck_table(rows, counts))
        bad = [r["name"] for r in rows if not r["ok"]]
        log_action("GRADCHECK", json.dumps({r["name"]: r["error"] for r in rows}))
        if bad:
            _handle_error(f"❌ Không đạt: {', '.join(bad)}")
            return 2
        return 0

    def cmd_words(self, args):
        pool = load_word_pool(args.pool)
        chosen = select_words(pool, args.k)
        console.print(_words_table(chosen, pool, min_pair_score(chosen)))
        return 0
