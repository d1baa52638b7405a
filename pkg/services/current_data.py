import logging
import re
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd
from scipy.interpolate import griddata

from models.data_models import CurrentCsvSchema
from models.exceptions import CurrentParseError, CurrentSchemaError
from services.disturbance_field import DisturbanceField

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

FLOAT_FORMAT = "%.12g"


class CurrentCsvClient:
    """Reads and writes gridded current frames in the `t_sec,ix,iy,u_east,v_north` schema"""

    def __init__(self, schema: Optional[CurrentCsvSchema] = None):
        self.schema = schema or CurrentCsvSchema()

    def load(self, path: PathLike) -> DisturbanceField:
        schema = self.schema
        frame = self._read_table(path)
        numeric = self._to_numeric(frame)

        t_col, x_col, y_col = schema.time_column, schema.x_index_column, schema.y_index_column
        numeric = self._drop_duplicates(numeric)

        extents = numeric.groupby(t_col).agg({x_col: "max", y_col: "max"})
        if extents[x_col].nunique() != 1 or extents[y_col].nunique() != 1:
            raise CurrentSchemaError("grid extent differs between frames")
        grid_w = int(extents[x_col].iloc[0]) + 1
        grid_h = int(extents[y_col].iloc[0]) + 1

        times = np.sort(numeric[t_col].unique())
        u = np.full((times.size, grid_h, grid_w), np.nan)
        v = np.full((times.size, grid_h, grid_w), np.nan)
        for index, (t, rows) in enumerate(numeric.groupby(t_col, sort=True)):
            ix = rows[x_col].to_numpy(dtype=int)
            iy = rows[y_col].to_numpy(dtype=int)
            u[index, iy, ix] = rows[schema.east_column].to_numpy(dtype=float)
            v[index, iy, ix] = rows[schema.north_column].to_numpy(dtype=float)
            filled = self._fill_missing(u[index], v[index])
            if filled:
                logger.info("frame t=%s: filled %d missing cells by nearest neighbour", t, filled)

        logger.info("ingested %s: %dx%d grid, %d frames", path, grid_w, grid_h, times.size)
        return DisturbanceField(times, u, v, cell_size=schema.cell_size,
                                strength_cap=schema.strength_cap)

    def save(self, field: DisturbanceField, path: PathLike) -> None:
        schema = self.schema
        frames, rows, cols = np.meshgrid(np.arange(field.n_frames), np.arange(field.grid_h),
                                         np.arange(field.grid_w), indexing="ij")
        table = pd.DataFrame({
            schema.time_column: field.timestamps[frames.ravel()],
            schema.x_index_column: cols.ravel(),
            schema.y_index_column: rows.ravel(),
            schema.east_column: field.u.ravel(),
            schema.north_column: field.v.ravel(),
        })
        table.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        logger.info("wrote %d rows to %s", len(table), path)

    # helpers --------------------------------------------------------------

    def _read_table(self, path: PathLike) -> pd.DataFrame:
        try:
            frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True,
                                skip_blank_lines=False)
        except pd.errors.ParserError as exc:
            match = re.search(r"line (\d+)", str(exc))
            raise CurrentParseError(str(exc), int(match.group(1)) if match else None) from exc
        except pd.errors.EmptyDataError as exc:
            raise CurrentSchemaError(f"{path} is empty") from exc
        missing = [c for c in self.schema.columns if c not in frame.columns]
        if missing:
            raise CurrentSchemaError(f"missing column(s): {', '.join(missing)}")
        # blank lines stay out of the data but keep their place in the row index
        frame = frame[frame.apply(lambda column: column.str.strip().ne("")).any(axis=1)]
        if frame.empty:
            raise CurrentSchemaError(f"{path} has no data rows")
        return frame[self.schema.columns]

    def _to_numeric(self, frame: pd.DataFrame) -> pd.DataFrame:
        numeric = frame.apply(pd.to_numeric, errors="coerce")
        bad = ~np.isfinite(numeric.to_numpy(dtype=float)).all(axis=1)
        for column in (self.schema.x_index_column, self.schema.y_index_column):
            values = numeric[column].to_numpy(dtype=float)
            with np.errstate(invalid="ignore"):
                bad |= (values < 0) | (np.floor(values) != values)
        if bad.any():
            position = int(np.argmax(bad))
            raw = ",".join(frame.iloc[position].astype(str))
            # header is line 1
            raise CurrentParseError(f"malformed row '{raw}'", int(frame.index[position]) + 2)
        numeric[self.schema.x_index_column] = numeric[self.schema.x_index_column].astype(int)
        numeric[self.schema.y_index_column] = numeric[self.schema.y_index_column].astype(int)
        return numeric

    def _drop_duplicates(self, numeric: pd.DataFrame) -> pd.DataFrame:
        keys = [self.schema.time_column, self.schema.x_index_column, self.schema.y_index_column]
        numeric = numeric.drop_duplicates()
        clashes = numeric.duplicated(subset=keys, keep=False)
        if clashes.any():
            first = numeric[clashes].iloc[0]
            raise CurrentSchemaError(
                "conflicting values for t={} ix={} iy={}".format(*(first[k] for k in keys)))
        return numeric

    @staticmethod
    def _fill_missing(u: np.ndarray, v: np.ndarray) -> int:
        missing = np.isnan(u)
        count = int(missing.sum())
        if count == 0:
            return 0
        known = np.argwhere(~missing)
        holes = np.argwhere(missing)
        u[missing] = griddata(known, u[~missing], holes, method="nearest")
        v[missing] = griddata(known, v[~missing], holes, method="nearest")
        return count


def ingest_currents(path: PathLike, schema: Optional[CurrentCsvSchema] = None) -> DisturbanceField:
    return CurrentCsvClient(schema).load(path)


def save_currents(field: DisturbanceField, path: PathLike,
                  schema: Optional[CurrentCsvSchema] = None) -> None:
    CurrentCsvClient(schema).save(field, path)
