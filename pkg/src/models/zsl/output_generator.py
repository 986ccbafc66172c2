"""
Output Generator Module for the semantic feature expansion toolkit
Handles generation of the CSV artifacts and the run manifest
"""

import csv
import hashlib
import json
import os
import platform
from datetime import datetime

import numpy as np
import scipy

from src.models.zsl.data_model import format_float, save_prototypes

TOOL_NAME = "ams-sfe"
TOOL_VERSION = "1.0.0"

MODE_SUFFIX = {"P": "p", "E": "e", "P+E": "pe"}


def _cell(value):
    if isinstance(value, (float, np.floating)):
        return format_float(value)
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def file_sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


class OutputGenerator:
    """
    Writes result files into one run directory and remembers what it wrote
    """

    def __init__(self, output_folder):
        """
        Initialize the output generator

        Args:
            output_folder (str): Run directory
        """
        self.output_folder = output_folder
        os.makedirs(self.output_folder, exist_ok=True)
        self.written = {}

    def _result(self, name, path):
        self.written[name] = path
        return {"success": True, "file_path": path, "filename": os.path.basename(path)}

    def generate_rows_csv(self, filename, header, rows, name=None):
        """
        Write a header plus rows; floats are written losslessly

        Args:
            filename (str): File name inside the run directory
            header (sequence): Column names
            rows (iterable): Row sequences
            name (str, optional): Artifact name in the manifest

        Returns:
            dict: Result with file path and success status
        """
        try:
            output_path = os.path.join(self.output_folder, filename)
            with open(output_path, "w", newline="") as f:
                writer = csv.writer(f, lineterminator="\n")
                writer.writerow(header)
                for row in rows:
                    writer.writerow([_cell(v) for v in row])
            return self._result(name or os.path.splitext(filename)[0], output_path)
        except Exception as e:
            return {"success": False, "error": str(e)}

    def generate_report_csv(self, report, filename="report.csv"):
        rows = [(k, hit) for k, hit in enumerate(report.hit_at_k, start=1)]
        return self.generate_rows_csv(filename, ("k", "hit_at_k"), rows)

    def generate_confusion_csv(self, report, filename="confusion.csv"):
        rows = [(cid,) + tuple(int(c) for c in row) for cid, row in zip(report.class_ids, report.confusion)]
        return self.generate_rows_csv(filename, ("class_id",) + tuple(report.class_ids), rows)

    def generate_per_class_csv(self, report, filename="per_class.csv"):
        counts = report.confusion.sum(axis=1)
        rows = [
            (cid, acc, int(count))
            for cid, acc, count in zip(report.class_ids, report.per_class_accuracy, counts)
        ]
        return self.generate_rows_csv(filename, ("class_id", "accuracy", "count"), rows)

    def generate_loss_trace_csv(self, trace, filename="loss_trace.csv"):
        return self.generate_rows_csv(
            filename, ("epoch", "reconstruction", "kl", "alignment", "total"), trace.rows()
        )

    def generate_prototypes_csv(self, table, filename="prototypes_expanded.csv"):
        try:
            path = save_prototypes(table, os.path.join(self.output_folder, filename))
            return self._result(os.path.splitext(filename)[0], path)
        except Exception as e:
            return {"success": False, "error": str(e)}

    def generate_summary_csv(self, metrics, filename="summary.csv"):
        """
        Mean and sample standard deviation across seeds

        Args:
            metrics (dict): metric name -> list of per-seed values
        """
        rows = []
        for metric, values in metrics.items():
            values = np.asarray(values, dtype=np.float64)
            std = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
            rows.append((metric, float(values.mean()), std, int(values.size)))
        return self.generate_rows_csv(filename, ("metric", "mean", "std", "n"), rows)

    def generate_evaluation_outputs(self, report, suffix=""):
        """report, confusion and per-class files for one evaluation"""
        tag = f"_{suffix}" if suffix else ""
        results = {"success": True, "files": {}}
        for kind, method in (
            ("report", self.generate_report_csv),
            ("confusion", self.generate_confusion_csv),
            ("per_class", self.generate_per_class_csv),
        ):
            result = method(report, f"{kind}{tag}.csv")
            if result["success"]:
                results["files"][f"{kind}{tag}"] = {"path": result["file_path"], "filename": result["filename"]}
            else:
                results["success"] = False
                results[f"{kind}{tag}_error"] = result["error"]
        return results

    def generate_all_outputs(self, report, trace=None, table=None, suffix=""):
        """
        Every artifact of a single run

        Returns:
            dict: success flag and generated files
        """
        results = self.generate_evaluation_outputs(report, suffix)
        tag = f"_{suffix}" if suffix else ""
        if trace is not None:
            trace_result = self.generate_loss_trace_csv(trace, f"loss_trace{tag}.csv")
            if trace_result["success"]:
                results["files"][f"loss_trace{tag}"] = {
                    "path": trace_result["file_path"],
                    "filename": trace_result["filename"],
                }
            else:
                results["success"] = False
                results["loss_trace_error"] = trace_result["error"]
        if table is not None:
            proto_result = self.generate_prototypes_csv(table, f"prototypes_expanded{tag}.csv")
            if proto_result["success"]:
                results["files"][f"prototypes_expanded{tag}"] = {
                    "path": proto_result["file_path"],
                    "filename": proto_result["filename"],
                }
            else:
                results["success"] = False
                results["prototypes_error"] = proto_result["error"]
        return results

    def generate_manifest(self, command, config, seeds, stages, status="ok", failed_stage=None):
        """
        Write manifest.json describing the run and hashing every artifact

        Args:
            command (str): Subcommand that produced the run
            config (ExperimentConfig): Resolved config
            seeds (sequence): Seeds executed
            stages (list): dicts with name, status and seconds
            status (str): 'ok' or 'failed'
            failed_stage (str, optional): Stage that aborted the run

        Returns:
            dict: Result with file path and success status
        """
        try:
            partial = status != "ok"
            artifacts = {}
            for name, path in sorted(self.written.items()):
                if os.path.exists(path):
                    artifacts[name] = {
                        "path": os.path.relpath(path, self.output_folder),
                        "sha256": file_sha256(path),
                        "partial": partial,
                    }
            manifest = {
                "tool": TOOL_NAME,
                "version": TOOL_VERSION,
                "command": command,
                "status": status,
                "failed_stage": failed_stage,
                "config": config.to_dict(),
                "config_hash": config.config_hash(),
                "seeds": list(seeds),
                "versions": {
                    "python": platform.python_version(),
                    "numpy": np.__version__,
                    "scipy": scipy.__version__,
                },
                "stages": stages,
                "artifacts": artifacts,
                "created": datetime.now().isoformat(),
            }
            output_path = os.path.join(self.output_folder, "manifest.json")
            with open(output_path, "w") as f:
                json.dump(manifest, f, indent=2, default=list)
            return {"success": True, "file_path": output_path, "filename": "manifest.json"}
        except Exception as e:
            return {"success": False, "error": str(e)}
