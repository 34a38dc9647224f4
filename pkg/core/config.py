import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


class Settings:
    def __init__(self):
        # Where datasets are read from and artifacts written to
        self.data_path = os.getenv("NATSET_DATA_PATH", "./data")
        self.output_dir = os.getenv("NATSET_OUTPUT_DIR", "./out")
        self.log_level = os.getenv("NATSET_LOG_LEVEL", "INFO").upper()

        # Recording rate of the trajectory data (inD/rounD record at 25 fps)
        self.frames_per_second = float(os.getenv("NATSET_FPS", "25"))

        # QP node solver
        self.qp_tolerance = float(os.getenv("NATSET_QP_TOLERANCE", "1e-8"))
        self.qp_max_iterations = int(os.getenv("NATSET_QP_MAX_ITER", "20000"))

        self.workers = int(os.getenv("NATSET_WORKERS", "1"))

        # Provenance timestamp; fixed so reruns produce byte-identical files
        self.source_date_epoch = int(os.getenv("SOURCE_DATE_EPOCH", "0"))

        if self.frames_per_second <= 0:
            raise ValueError("NATSET_FPS must be positive.")
        if not 0 < self.qp_tolerance < 1:
            raise ValueError("NATSET_QP_TOLERANCE must lie in (0, 1).")
        if self.qp_max_iterations < 1:
            raise ValueError("NATSET_QP_MAX_ITER must be at least 1.")
        if self.workers < 1:
            raise ValueError("NATSET_WORKERS must be at least 1.")
        if self.log_level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ValueError(
                f"NATSET_LOG_LEVEL has unknown level {self.log_level!r}.")

    @property
    def sample_period(self) -> float:
        return 1.0 / self.frames_per_second


settings = Settings()
