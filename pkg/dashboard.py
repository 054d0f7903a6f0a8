"""
Dashboard for the Shift Learning Lab.

This script prints a formatted overview of an experiment output directory:
the run index, the summary tables and the head of every result table.
"""
import sys
import json
import logging
import argparse
import pandas as pd
from datetime import datetime
from pathlib import Path
from tabulate import tabulate

from src.storage.results import ResultStore, find_outputs
from src.utils.errors import LabError

logger = logging.getLogger(__name__)

INDEX_COLUMNS = ['kind', 'seed', 'cell', 'status', 'wall_time_s']


def create_section(title, width=80):
    """Create a formatted section header."""
    print("\n" + "=" * width)
    print(f"{title.center(width)}")
    print("=" * width)


def format_table(data, headers=None, tablefmt="grid"):
    """Format data as a table."""
    try:
        if isinstance(data, pd.DataFrame):
            return tabulate(data, headers='keys', tablefmt=tablefmt, showindex=False, floatfmt=".4g")
        elif isinstance(data, list) and all(isinstance(item, dict) for item in data):
            return tabulate(data, headers='keys', tablefmt=tablefmt, floatfmt=".4g")
        elif isinstance(data, dict):
            return tabulate([[k, v] for k, v in data.items()],
                            headers=headers or ['Property', 'Value'],
                            tablefmt=tablefmt)
        else:
            return str(data)
    except Exception as e:
        logger.error(f"Error formatting table: {e}")
        return str(data)


def load_run_index(output_dir):
    """
    Read the run index of an output directory.

    Args:
        output_dir (str): Directory written by the harness

    Returns:
        pandas.DataFrame: One row per run, metrics as columns
    """
    outputs = find_outputs(output_dir)
    if outputs['index'] is None:
        return pd.DataFrame()
    with ResultStore(output_dir, spec_hash='') as store:
        return store.query_runs()


def display_runs(runs):
    """Display the run index with status counts and metric columns."""
    create_section("RUNS")
    if runs.empty:
        print("No runs indexed.")
        return

    print(format_table(runs['status'].value_counts().rename_axis('status').reset_index(name='count')))
    metric_columns = [c for c in runs.columns
                      if c not in INDEX_COLUMNS + ['id', 'spec_hash', 'trace_paths', 'version', 'stored_at']]
    shown = runs[INDEX_COLUMNS + metric_columns].copy()
    shown['cell'] = shown['cell'].map(lambda text: ', '.join(f"{k}={v}" for k, v in json.loads(text).items()))
    print()
    print(format_table(shown))


def display_tables(tables, max_rows=10):
    """Display summary tables in full and the head of the other tables."""
    for path in tables:
        if path.name.startswith('trace_'):
            continue
        header = ResultStore.read_header(path)
        table = ResultStore.read_table(path)
        create_section(path.stem.upper())
        print(f"spec_hash: {header.get('spec_hash', 'n/a')[:12]}  version: {header.get('version', 'n/a')}")
        print(format_table(table if path.stem.endswith('_summary') else table.head(max_rows)))
        if not path.stem.endswith('_summary') and len(table) > max_rows:
            print(f"... {len(table) - max_rows} more rows")


def render_report(output_dir):
    """
    Print every table of an output directory.

    Args:
        output_dir (str): Directory written by the harness

    Returns:
        bool: False when the directory cannot be read
    """
    try:
        outputs = find_outputs(output_dir)
        create_section("SHIFT LEARNING LAB DASHBOARD")
        print(f"Output directory: {output_dir}")
        print(f"Time: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}")
        display_runs(load_run_index(output_dir))
        display_tables(outputs['tables'])
        create_section("REPORT COMPLETE")
        return True
    except (LabError, OSError, ValueError) as e:
        logger.error(f"Error rendering {output_dir}: {e}")
        print(f"Error rendering {output_dir}: {e}")
        return False


def main():
    """Run the dashboard application."""
    parser = argparse.ArgumentParser(description="Shift Learning Lab Dashboard")
    parser.add_argument("--out", help="Experiment output directory", default="results")
    args = parser.parse_args()

    if not Path(args.out).exists():
        print(f"Output directory not found: {args.out}")
        sys.exit(1)

    sys.exit(0 if render_report(args.out) else 1)


if __name__ == "__main__":
    main()
