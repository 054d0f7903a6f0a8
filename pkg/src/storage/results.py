"""
Result storage for the Shift Learning Lab.
"""
import json
import sqlite3
import logging
import pandas as pd
import numpy as np
from pathlib import Path

from .. import __version__
from ..utils.errors import ConfigurationError
from ..utils.helpers import ensure_dir_exists, get_timestamp

logger = logging.getLogger(__name__)

INDEX_NAME = 'runs.db'
RECORDS_NAME = 'runs.jsonl'


class ResultStore:
    """
    Writes the tables, run records and checkpoints of one experiment.

    Every file carries the spec hash and artifact version: CSV tables in a
    leading `#` comment line, JSONL files in a header object on the first line,
    checkpoints in their JSON sidecar. Run records are also indexed in an
    SQLite database for the dashboard.
    """

    def __init__(self, output_dir, spec_hash, version=__version__):
        """
        Initialize the store and its run index.

        Args:
            output_dir (str): Directory for every output file
            spec_hash (str): Hash of the experiment specification
            version (str): Artifact version string
        """
        self.output_dir = ensure_dir_exists(output_dir)
        self.spec_hash = spec_hash
        self.version = version
        self.db_path = self.output_dir / INDEX_NAME
        self.conn = None

        self._connect()
        self._create_tables()

        logger.info(f"Result store initialized at {self.output_dir}")

    @property
    def header(self):
        return f"# spec_hash={self.spec_hash} version={self.version}"

    def _connect(self):
        """Establish a connection to the run index."""
        try:
            self.conn = sqlite3.connect(self.db_path)
            self.conn.row_factory = sqlite3.Row
        except sqlite3.Error as e:
            logger.error(f"Run index connection error: {str(e)}")
            raise

    def _create_tables(self):
        """Create the run index table if it doesn't exist."""
        try:
            cursor = self.conn.cursor()
            cursor.execute('''
            CREATE TABLE IF NOT EXISTS runs (
                id INTEGER PRIMARY KEY,
                spec_hash TEXT NOT NULL,
                kind TEXT,
                seed INTEGER,
                cell TEXT,
                status TEXT,
                metrics TEXT,
                trace_paths TEXT,
                wall_time_s REAL,
                version TEXT,
                stored_at TEXT
            )
            ''')
            cursor.execute('CREATE INDEX IF NOT EXISTS idx_runs_spec_hash ON runs(spec_hash)')
            cursor.execute('CREATE INDEX IF NOT EXISTS idx_runs_kind ON runs(kind)')
            self.conn.commit()
        except sqlite3.Error as e:
            logger.error(f"Error creating run index tables: {str(e)}")
            raise

    def _path(self, name, suffix):
        name = str(name)
        return self.output_dir / (name if name.endswith(suffix) else name + suffix)

    def write_table(self, name, table):
        """
        Write a long-format table as CSV behind the header comment.

        Args:
            name (str): File name, `.csv` appended when missing
            table (pandas.DataFrame): Table

        Returns:
            Path: Written file
        """
        path = self._path(name, '.csv')
        with open(path, 'w', newline='') as file:
            file.write(self.header + '\n')
            table.to_csv(file, index=False, lineterminator='\n')
        logger.info(f"Wrote {len(table)} rows to {path}")
        return path

    @staticmethod
    def read_table(path):
        """
        Read a table written by write_table.

        Args:
            path (str): CSV path

        Returns:
            pandas.DataFrame: The table without the header comment
        """
        return pd.read_csv(path, comment='#')

    @staticmethod
    def read_header(path):
        """
        Parse the `key=value` pairs of a CSV header comment.

        Args:
            path (str): CSV path

        Returns:
            dict: Header fields
        """
        with open(path, 'r') as file:
            first = file.readline().strip()
        if not first.startswith('#'):
            raise ConfigurationError(f"{path} has no header comment")
        return dict(item.split('=', 1) for item in first.lstrip('# ').split())

    def write_records(self, records, name=RECORDS_NAME):
        """
        Write run records as JSON lines after a header object.

        Args:
            records (list): RunRecord objects or dictionaries
            name (str): File name

        Returns:
            Path: Written file
        """
        path = self._path(name, '.jsonl')
        with open(path, 'w') as file:
            file.write(json.dumps({'spec_hash': self.spec_hash, 'version': self.version}) + '\n')
            for record in records:
                data = record.to_dict() if hasattr(record, 'to_dict') else dict(record)
                file.write(json.dumps(data, sort_keys=True) + '\n')
        logger.info(f"Wrote {len(records)} run records to {path}")
        return path

    @staticmethod
    def read_records(path):
        """
        Read a JSONL file written by write_records.

        Args:
            path (str): JSONL path

        Returns:
            tuple: (header dict, list of record dicts)
        """
        with open(path, 'r') as file:
            lines = [json.loads(line) for line in file if line.strip()]
        if not lines:
            raise ConfigurationError(f"{path} is empty")
        return lines[0], lines[1:]

    def save_checkpoint(self, name, arrays):
        """
        Save named arrays as one little-endian float64 blob plus a JSON sidecar.

        Args:
            name (str): Checkpoint name, without suffix
            arrays (dict): Name -> numpy array

        Returns:
            Path: The `.bin` file
        """
        bin_path = self._path(name, '.bin')
        layout, offset = [], 0
        with open(bin_path, 'wb') as file:
            for key, value in arrays.items():
                data = np.ascontiguousarray(value, dtype='<f8')
                file.write(data.tobytes())
                layout.append({'name': key, 'shape': list(data.shape), 'offset': offset})
                offset += data.size
        sidecar = {'spec_hash': self.spec_hash, 'version': self.version, 'dtype': '<f8', 'arrays': layout}
        with open(bin_path.with_suffix('.json'), 'w') as file:
            json.dump(sidecar, file, indent=2)
        logger.debug(f"Saved checkpoint {bin_path} ({offset} values)")
        return bin_path

    @staticmethod
    def load_checkpoint(path):
        """
        Load a checkpoint written by save_checkpoint.

        Args:
            path (str): The `.bin` file

        Returns:
            dict: Name -> numpy array
        """
        path = Path(path)
        with open(path.with_suffix('.json'), 'r') as file:
            sidecar = json.load(file)
        flat = np.fromfile(path, dtype=sidecar.get('dtype', '<f8'))
        arrays = {}
        for entry in sidecar['arrays']:
            size = int(np.prod(entry['shape'])) if entry['shape'] else 1
            chunk = flat[entry['offset']:entry['offset'] + size]
            arrays[entry['name']] = chunk.reshape(entry['shape'])
        return arrays

    def index_runs(self, records, kind):
        """
        Store run records in the run index.

        Args:
            records (list): RunRecord objects
            kind (str): Experiment kind

        Returns:
            int: Number of records inserted
        """
        if not records:
            return 0

        try:
            stored_at = get_timestamp()
            df = pd.DataFrame([{
                'spec_hash': record.spec_hash,
                'kind': kind,
                'seed': record.seed,
                'cell': json.dumps(record.cell, sort_keys=True),
                'status': record.status,
                'metrics': json.dumps(record.metrics, sort_keys=True),
                'trace_paths': json.dumps([str(p) for p in record.trace_paths]),
                'wall_time_s': record.wall_time_s,
                'version': self.version,
                'stored_at': stored_at,
            } for record in records])

            with self.conn:
                count = df.to_sql('runs', self.conn, if_exists='append', index=False)

            logger.info(f"Indexed {count} runs of kind {kind}")
            return count

        except Exception as e:
            logger.error(f"Error indexing runs: {str(e)}")
            return 0

    def query_runs(self, kind=None):
        """
        Read the run index.

        Args:
            kind (str): Optional kind filter

        Returns:
            pandas.DataFrame: Index rows with metrics expanded into columns
        """
        query = "SELECT * FROM runs"
        params = []
        if kind:
            query += " WHERE kind = ?"
            params.append(kind)
        query += " ORDER BY id"

        try:
            runs = pd.read_sql_query(query, self.conn, params=params)
        except Exception as e:
            logger.error(f"Error reading the run index: {str(e)}")
            return pd.DataFrame()

        if runs.empty:
            return runs
        metrics = pd.DataFrame([json.loads(m) for m in runs['metrics']], index=runs.index)
        return pd.concat([runs.drop(columns=['metrics']), metrics], axis=1)

    def close(self):
        """Close the run index connection."""
        if self.conn:
            self.conn.close()
            self.conn = None
            logger.debug("Run index connection closed")

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()


def find_outputs(output_dir):
    """
    List the CSV tables and run records under an output directory.

    Args:
        output_dir (str): Directory written by a ResultStore

    Returns:
        dict: `tables` and `records` lists of paths, sorted by name
    """
    output_dir = Path(output_dir)
    if not output_dir.is_dir():
        raise ConfigurationError(f"output directory {output_dir} does not exist")
    return {
        'tables': sorted(output_dir.glob('*.csv')),
        'records': sorted(output_dir.glob('*.jsonl')),
        'index': output_dir / INDEX_NAME if (output_dir / INDEX_NAME).exists() else None,
    }
