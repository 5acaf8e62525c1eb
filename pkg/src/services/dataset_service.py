import logging
from pathlib import Path

import numpy as np

from core.exceptions import DatasetError
from model import ImuSample, ScenarioDataset
from services.evaluation_service import EvaluationService
from services.plane_map_service import PlaneMapService

logger = logging.getLogger(__name__)

IMU_HEADER = "t,wx,wy,wz,ax,ay,az"
SCAN_HEADER = "x,y,z"
INDEX_HEADER = "index,t"
FLOAT_FORMAT = "%.17g"


def write_csv(path: Path, rows: np.ndarray, header: str, fmt: str | list[str] = FLOAT_FORMAT):
    np.savetxt(path, rows, fmt=fmt, delimiter=",", header=header, comments="")


def read_csv(path: Path, header: str, columns: int) -> np.ndarray:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        logger.error(f"Could not read {path}: {e}", exc_info=True)
        raise DatasetError(f"cannot read {path}: {e}")
    if not lines or lines[0].strip() != header:
        logger.error(f"{path} does not start with the header '{header}'.")
        raise DatasetError(f"{path}: expected header '{header}'")
    body = [line for line in lines[1:] if line.strip()]
    if not body:
        return np.zeros((0, columns))
    try:
        data = np.array([[float(v) for v in line.split(",")] for line in body])
    except ValueError as e:
        logger.error(f"Non-numeric entry in {path}: {e}")
        raise DatasetError(f"{path}: non-numeric entry")
    if data.shape[1] != columns:
        logger.error(f"{path} has {data.shape[1]} columns, expected {columns}.")
        raise DatasetError(f"{path}: expected {columns} columns, got {data.shape[1]}")
    return data


class DatasetService:
    def __init__(self):
        self.maps = PlaneMapService()
        self.evaluation = EvaluationService()

    def write(self, dataset: ScenarioDataset, out_dir: Path) -> Path:
        out_dir = Path(out_dir)
        logger.info(f"Writing dataset to {out_dir}.")
        try:
            (out_dir / "scans").mkdir(parents=True, exist_ok=True)
            imu = np.array(
                [[s.timestamp, *s.angular_rate, *s.acceleration] for s in dataset.imu]
            ).reshape(-1, 7)
            write_csv(out_dir / "imu.csv", imu, IMU_HEADER)

            index = np.column_stack([np.arange(len(dataset.scan_times)), dataset.scan_times])
            write_csv(out_dir / "scans.csv", index, INDEX_HEADER, fmt=["%d", FLOAT_FORMAT])
            for k, points in enumerate(dataset.scans):
                write_csv(out_dir / "scans" / f"{k:06d}.csv", points.reshape(-1, 3), SCAN_HEADER)
        except OSError as e:
            logger.error(f"Could not write dataset to {out_dir}: {e}", exc_info=True)
            raise DatasetError(f"cannot write dataset to {out_dir}: {e}")

        if dataset.world is not None:
            self.maps.save_world(out_dir / "world.txt", dataset.world)
        if dataset.ground_truth is not None:
            self.evaluation.write_tum(out_dir / "gt.tum", dataset.ground_truth)
        return out_dir

    def read(self, data_dir: Path) -> ScenarioDataset:
        data_dir = Path(data_dir)
        if not data_dir.is_dir():
            logger.error(f"Dataset directory {data_dir} does not exist.")
            raise DatasetError(f"dataset directory {data_dir} does not exist")

        imu_rows = read_csv(data_dir / "imu.csv", IMU_HEADER, 7)
        if len(imu_rows) and np.any(np.diff(imu_rows[:, 0]) <= 0.0):
            logger.error(f"IMU timestamps in {data_dir} are not strictly increasing.")
            raise DatasetError(f"{data_dir / 'imu.csv'}: timestamps not strictly increasing")
        imu = [
            ImuSample(timestamp=float(r[0]), angular_rate=r[1:4], acceleration=r[4:7])
            for r in imu_rows
        ]

        index = read_csv(data_dir / "scans.csv", INDEX_HEADER, 2)
        scans = [
            read_csv(data_dir / "scans" / f"{int(k):06d}.csv", SCAN_HEADER, 3)
            for k in index[:, 0]
        ]

        world_path = data_dir / "world.txt"
        gt_path = data_dir / "gt.tum"
        dataset = ScenarioDataset(
            imu=imu,
            scan_times=index[:, 1].copy(),
            scans=scans,
            ground_truth=self.evaluation.read_tum(gt_path) if gt_path.exists() else None,
            world=self.maps.load_world(world_path) if world_path.exists() else None,
        )
        logger.info(
            f"Loaded dataset {data_dir}: {len(imu)} IMU samples, {len(scans)} scans."
        )
        return dataset
