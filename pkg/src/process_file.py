"""Định dạng file trên đĩa: thư mục dataset (manifest + nhị phân float32 + labels.csv) và checkpoint."""
import os, csv, io, json
import numpy as np
from src.core import _CONFIG, FormatError, PairingError, _canonical_json, _atomic_write
from src.process_data import PairedDataset
from src.process_log import log_action

DATASET_MANIFEST = "manifest.json"
LABELS_FILE = "labels.csv"
BINARY_FILES = {"imagined": "imagined.f32", "overt": "overt.f32"}
CHECKPOINT_MANIFEST = "checkpoint.json"
CHECKPOINT_BLOB = "weights.f32"
CHECKPOINT_FORMAT = "dal-eeg-checkpoint"
_LE_F32 = np.dtype("<f4")

_MANIFEST_FIELDS = ("subject_id", "fs", "channels", "samples", "trials_per_word", "words",
                    "pairing_policy", "seeds", "generator_version", "n_imagined", "n_overt")


def _read_json(path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError:
        raise FormatError(f"Thiếu file '{path}'")
    except json.JSONDecodeError as e:
        raise FormatError(f"'{path}' không phải JSON hợp lệ: {e}")


class FileManager:
    """Đọc/ghi thư mục dataset theo định dạng cố định; mọi file được ghi nguyên tử."""

    def write_dataset(self, dataset, folder):
        os.makedirs(folder, exist_ok=True)
        manifest = {
            "subject_id": dataset.subject_id,
            "fs": dataset.fs,
            "channels": int(dataset.channels),
            "samples": int(dataset.samples),
            "trials_per_word": int(dataset.trials_per_word),
            "words": list(dataset.words),
            "pairing_policy": dataset.pairing_policy,
            "seeds": dict(dataset.seeds),
            "generator_version": int(dataset.version),
            "n_imagined": int(dataset.imagined.shape[0]),
            "n_overt": int(dataset.overt.shape[0]),
            "dtype": "float32-le",
            "layout": "trial,channel,sample",
        }
        _atomic_write(os.path.join(folder, BINARY_FILES["imagined"]), dataset.imagined.astype(_LE_F32).tobytes())
        _atomic_write(os.path.join(folder, BINARY_FILES["overt"]), dataset.overt.astype(_LE_F32).tobytes())

        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["trial", "condition", "label", "pair_index"])
        for i, lab in enumerate(dataset.imagined_labels):
            writer.writerow([i, "imagined", int(lab), int(dataset.pairing[i])])
        for i, lab in enumerate(dataset.overt_labels):
            writer.writerow([i, "overt", int(lab), -1])
        _atomic_write(os.path.join(folder, LABELS_FILE), buf.getvalue())
        # Manifest ghi sau cùng: thư mục chỉ hợp lệ khi manifest đã có
        _atomic_write(os.path.join(folder, DATASET_MANIFEST), _canonical_json(manifest))
        log_action("WRITE_DATASET", f"{dataset.subject_id} -> {folder}")

    def _read_binary(self, folder, condition, n, channels, samples):
        path = os.path.join(folder, BINARY_FILES[condition])
        if not os.path.exists(path):
            raise FormatError(f"Thiếu file nhị phân '{path}'")
        expected = n * channels * samples * _LE_F32.itemsize
        actual = os.path.getsize(path)
        if actual != expected:
            msg = f"{BINARY_FILES[condition]}: cần {expected} byte, thực tế {actual} byte"
            per_channel = n * samples * _LE_F32.itemsize
            if per_channel and actual % per_channel == 0:
                msg += f" (manifest channels={channels} nhưng file nhị phân suy ra channels={actual // per_channel})"
            raise FormatError(msg)
        return np.fromfile(path, dtype=_LE_F32).astype(np.float32).reshape(n, channels, samples)

    def _read_labels(self, folder, n_imagined, n_overt):
        path = os.path.join(folder, LABELS_FILE)
        if not os.path.exists(path):
            raise FormatError(f"Thiếu file '{path}'")
        im_labels, ov_labels, pairing = [], [], []
        with open(path, "r", encoding="utf-8", newline="") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames != ["trial", "condition", "label", "pair_index"]:
                raise FormatError(f"{LABELS_FILE}: header sai {reader.fieldnames}")
            for row_no, row in enumerate(reader, start=2):
                try:
                    lab, pair = int(row["label"]), int(row["pair_index"])
                except (TypeError, ValueError):
                    raise FormatError(f"{LABELS_FILE} dòng {row_no}: label/pair_index không phải số nguyên")
                if row["condition"] == "imagined":
                    im_labels.append(lab)
                    pairing.append(pair)
                elif row["condition"] == "overt":
                    ov_labels.append(lab)
                else:
                    raise FormatError(f"{LABELS_FILE} dòng {row_no}: condition '{row['condition']}' không hợp lệ")
        if len(im_labels) != n_imagined or len(ov_labels) != n_overt:
            raise FormatError(f"{LABELS_FILE}: {len(im_labels)}/{len(ov_labels)} dòng, manifest khai báo {n_imagined}/{n_overt}")
        return np.array(im_labels), np.array(ov_labels), np.array(pairing, dtype=np.int64)

    def read_dataset(self, folder):
        manifest = _read_json(os.path.join(folder, DATASET_MANIFEST))
        for key in _MANIFEST_FIELDS:
            if key not in manifest:
                raise FormatError(f"manifest.json thiếu trường '{key}'")
        c, t = int(manifest["channels"]), int(manifest["samples"])
        imagined = self._read_binary(folder, "imagined", int(manifest["n_imagined"]), c, t)
        overt = self._read_binary(folder, "overt", int(manifest["n_overt"]), c, t)
        im_labels, ov_labels, pairing = self._read_labels(folder, imagined.shape[0], overt.shape[0])
        ds = PairedDataset(
            subject_id=manifest["subject_id"], fs=manifest["fs"], words=list(manifest["words"]),
            trials_per_word=int(manifest["trials_per_word"]), imagined=imagined, overt=overt,
            imagined_labels=im_labels, overt_labels=ov_labels, pairing=pairing,
            pairing_policy=manifest["pairing_policy"], seeds=dict(manifest["seeds"]),
            version=int(manifest["generator_version"]))
        # pair_index = -1 ở mọi dòng: dataset chưa ghép cặp (chỉ dùng được cho điều kiện w/o)
        if np.any(pairing >= 0):
            try:
                ds.validate_pairing()
            except PairingError as e:
                raise FormatError(f"{LABELS_FILE}: pair_index không hợp lệ ({e})")
        return ds

    def list_datasets(self, root):
        """Các thư mục con có manifest.json, sắp theo tên."""
        if not os.path.isdir(root):
            raise FormatError(f"Không tìm thấy thư mục dữ liệu '{root}'")
        return sorted(os.path.join(root, d) for d in os.listdir(root)
                      if os.path.isfile(os.path.join(root, d, DATASET_MANIFEST)))

    # --- Checkpoint ---

    def write_checkpoint(self, folder, tensors, meta=None):
        """tensors: dict tên → ndarray (thứ tự dict là thứ tự registry)."""
        registry, blobs, offset = [], [], 0
        for name, arr in tensors.items():
            a = np.ascontiguousarray(np.asarray(arr), dtype=_LE_F32)
            registry.append({"name": name, "shape": list(a.shape), "offset": offset, "count": int(a.size)})
            blobs.append(a.tobytes())
            offset += a.size
        manifest = {"format": CHECKPOINT_FORMAT, "version": _CONFIG.TOOLKIT_VERSION,
                    "meta": meta or {}, "tensors": registry}
        _atomic_write(os.path.join(folder, CHECKPOINT_BLOB), b"".join(blobs))
        _atomic_write(os.path.join(folder, CHECKPOINT_MANIFEST), _canonical_json(manifest))
        log_action("WRITE_CHECKPOINT", f"{len(registry)} tensors -> {folder}")

    def read_checkpoint(self, folder):
        manifest = _read_json(os.path.join(folder, CHECKPOINT_MANIFEST))
        if manifest.get("format") != CHECKPOINT_FORMAT:
            raise FormatError(f"Checkpoint '{folder}' sai định dạng: {manifest.get('format')}")
        path = os.path.join(folder, CHECKPOINT_BLOB)
        if not os.path.exists(path):
            raise FormatError(f"Thiếu file '{path}'")
        blob = np.fromfile(path, dtype=_LE_F32)
        tensors = {}
        for entry in manifest["tensors"]:
            start, count = int(entry["offset"]), int(entry["count"])
            if start + count > blob.size:
                raise FormatError(f"Tensor '{entry['name']}' vượt quá blob ({start + count} > {blob.size} phần tử)")
            tensors[entry["name"]] = blob[start:start + count].astype(np.float32).reshape(entry["shape"])
        return tensors, manifest.get("meta", {})
