# ==============================================================================
#                                SYSTEM PATHS
# ==============================================================================
TOOLKIT_NAME = "dal-eeg"
TOOLKIT_VERSION = "1.0.0"
OUTPUT_ROOT = "runs"                 # Bị ghi đè bởi biến môi trường DAL_EEG_OUT
OUTPUT_ENV_VAR = "DAL_EEG_OUT"
LOG_DIR = "logs"
DATA_DIR = "data"
WORD_POOL_FILE = "data/word_pool.txt"
REFERENCE_TABLE_FILE = "data/reference_accuracy.csv"

# ==============================================================================
#                               INTERFACE SETTINGS
# ==============================================================================
COLOR_HEADER  = "bright_blue"
COLOR_MENU    = "magenta"
COLOR_STATS   = "cyan"
COLOR_ERROR   = "red"
COLOR_SUCCESS = "green"
COLOR_WARNING = "yellow"
COLOR_INFO    = "cyan"

# ==============================================================================
#                          SYNTHETIC DATA GENERATOR
# ==============================================================================
GEN_N_SUBJECTS = 8                   # Số người tham gia (S1–S8)
GEN_WORDS = ["Ba", "Ku", "He", "Li"]
GEN_TRIALS_PER_WORD = 50             # 50 trial/từ → 200 trial mỗi điều kiện
GEN_CHANNELS = 58
GEN_FS = 1000                        # Hz
GEN_WINDOW_S = 2.0                   # Cửa sổ thực hiện nhiệm vụ (giây)
GEN_IMAGINED_SNR_DB = -16.0
GEN_OVERT_SNR_DB = -6.0              # Phải >= GEN_IMAGINED_SNR_DB
GEN_TEMPLATE_BANDWIDTH = 4.0         # Hz, băng thông đường bao của template
GEN_CARRIER_RANGE = (4.0, 40.0)      # Hz, tần số sóng mang theo lớp
GEN_ARTIFACT_AMPLITUDE = 2.0         # Biên độ artifact phát âm (bội số RMS tín hiệu)
GEN_LINE_HZ = 60.0
GEN_LINE_AMPLITUDE = 0.5             # Bội số RMS nhiễu
GEN_MICROVOLT_SCALE = 10.0
GEN_IMAGINED_GAIN = 1.0
GEN_OVERT_GAIN = 1.0
GEN_SEED = 2021
GEN_PAIRING_POLICY = "by_index"      # "by_index" | "random_within_class"
GEN_VERSION = 1

# ==============================================================================
#                               PREPROCESSING
# ==============================================================================
PREP_NOTCH_HZ = 60.0
PREP_NOTCH_Q = 30.0
PREP_TARGET_FS = 256                 # 58×512 sau khi resample cửa sổ 2 giây
PREP_WINDOW_S = 2.0
PREP_NORMALIZE = "per_channel_zscore"  # "per_channel_zscore" | "none"
PREP_LOWPASS_RATIO = 0.45            # Cắt thông thấp = 0.45·fs_out trước khi hạ mẫu
PREP_LOWPASS_ORDER = 8
PREP_HIGHPASS_HZ = None              # Tắt mặc định; đặt số Hz để bật lọc thông cao

# ==============================================================================
#                                 DAL MODEL
# ==============================================================================
MODEL_F1 = 8                         # Số bộ lọc thời gian
MODEL_DM = 2                         # Hệ số nhân độ sâu (spatial depthwise)
MODEL_F2 = 16                        # Độ sâu đầu ra pointwise
MODEL_TEMPORAL_KERNEL = 3            # 1×3
MODEL_SEP_KERNEL = 16
MODEL_POOL1 = 4
MODEL_POOL2 = 8
MODEL_DEC_KERNEL1 = 24               # 1×24
MODEL_DEC_STRIDE1 = 8
MODEL_DEC_KERNEL2 = 4                # 1×4
MODEL_DEC_STRIDE2 = 4
MODEL_DROPOUT_P = 0.25
MODEL_ALPHA = 0.9                    # Trọng số CE trong loss tổng
MODEL_RECON_LOSS = "l1"              # "l1" | "l2"
MODEL_ELU_ALPHA = 1.0
MODEL_BN_EPS = 1e-5
MODEL_BN_MOMENTUM = 0.1

# ==============================================================================
#                                  TRAINING
# ==============================================================================
TRAIN_LR = 4e-3
TRAIN_BETA1 = 0.9
TRAIN_BETA2 = 0.999
TRAIN_ADAM_EPS = 1e-8
TRAIN_BATCH = 8
TRAIN_EPOCHS = 12                     # Ngân sách cố định, không dừng sớm
TRAIN_SEED = 7
TRAIN_DTYPE = "float32"              # float64 chỉ dùng cho kiểm tra gradient

# ==============================================================================
#                                 BASELINES
# ==============================================================================
CSP_FILTERS_PER_CLASS = 4            # 2 lớn nhất + 2 nhỏ nhất
CSP_DIAGONAL_LOADING = 1e-6          # Bội số của trace
CSP_LOG_FLOOR = 1e-12
LDA_SHRINKAGE = 0.1
JACOBI_TOL = 2.2e-16                # |a_pq| <= tol·sqrt(|a_pp·a_qq|) coi như 0 (≈ epsilon máy)
JACOBI_MAX_SWEEPS = 100

# ==============================================================================
#                          CROSS-VALIDATION & RUN MATRIX
# ==============================================================================
CV_K = 5
CV_REPEATS = 4
CV_SEED = 100
RUN_METHODS = ["csp_lda", "eegnet", "dal"]
RUN_CONDITIONS = ["wo", "w"]
RUN_JOBS = 1
RUN_SAVE_CHECKPOINTS = True

# ==============================================================================
#                              STATISTICS & REPORT
# ==============================================================================
STATS_ALPHA = 0.05
REPORT_DECIMALS = 2
REPORT_CHART_WIDTH = 640
REPORT_CHART_HEIGHT = 360
