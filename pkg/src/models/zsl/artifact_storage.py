"""
Artifact Storage Module for the semantic feature expansion toolkit
Handles the on-disk stage cache: trained expansion models keyed by the hash
of the settings that produced them
"""

import datetime
import hashlib
import json
import logging
import os
import shutil

import numpy as np

from src.models.zsl.expansion import ExpansionModel, LossTrace
from src.models.zsl.nn_core import load_network, save_network

logger = logging.getLogger("ArtifactStorage")

_TRACE_FIELDS = ("epoch", "reconstruction", "kl", "alignment", "total")


def stage_key(stage, payload):
    """
    Hash identifying one stage's inputs

    Args:
        stage (str): Stage name
        payload (dict): JSON-serializable settings the stage depends on

    Returns:
        str: hex SHA-256
    """
    text = json.dumps({"stage": stage, "payload": payload}, sort_keys=True, default=list)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class ArtifactStorage:
    """
    Handles storage and retrieval of cached stage outputs
    """

    def __init__(self, cache_folder):
        """
        Initialize the cache

        Args:
            cache_folder (str): Folder holding one subfolder per cache key
        """
        self.cache_folder = cache_folder
        os.makedirs(self.cache_folder, exist_ok=True)
        self.metadata_file = os.path.join(self.cache_folder, "cache_index.json")
        if not os.path.exists(self.metadata_file):
            with open(self.metadata_file, "w") as f:
                json.dump([], f)

    def _entry_folder(self, key):
        return os.path.join(self.cache_folder, key)

    def save_expansion(self, key, model, trace, metadata=None):
        """
        Store a trained expansion model and its loss trace

        Args:
            key (str): Cache key from stage_key
            model (ExpansionModel): Trained model
            trace (LossTrace): Per-epoch losses
            metadata (dict, optional): Extra fields for the index

        Returns:
            dict: Result with success status and the entry
        """
        try:
            folder = self._entry_folder(key)
            os.makedirs(folder, exist_ok=True)
            save_network(model.encoder, os.path.join(folder, "encoder.npz"))
            save_network(model.decoder, os.path.join(folder, "decoder.npz"))
            with open(os.path.join(folder, "trace.npz"), "wb") as f:
                np.savez(f, **{name: np.asarray(getattr(trace, name)) for name in _TRACE_FIELDS})

            entry = {
                "id": key,
                "stage": "expand",
                "variant": model.variant,
                "latent_dim": model.latent_dim,
                "path": folder,
                "date_created": datetime.datetime.now().isoformat(),
            }
            if metadata:
                entry.update(metadata)
            self._update_metadata(entry)
            return {"success": True, "key": key, "entry": entry}
        except Exception as e:
            return {"success": False, "error": str(e)}

    def load_expansion(self, key):
        """
        Fetch a cached expansion model

        Returns:
            dict: success with 'model' and 'trace', or success False on a miss
        """
        try:
            entry = self.get_entry(key)
            if not entry["success"]:
                return entry
            folder = entry["entry"]["path"]
            encoder = load_network(os.path.join(folder, "encoder.npz"))
            decoder = load_network(os.path.join(folder, "decoder.npz"))
            model = ExpansionModel(
                variant=entry["entry"]["variant"],
                encoder=encoder,
                decoder=decoder,
                latent_dim=int(entry["entry"]["latent_dim"]),
            )
            trace = LossTrace()
            with np.load(os.path.join(folder, "trace.npz"), allow_pickle=False) as data:
                for row in zip(*(data[name] for name in _TRACE_FIELDS)):
                    trace.append(int(row[0]), *row[1:])
            return {"success": True, "model": model, "trace": trace}
        except Exception as e:
            return {"success": False, "error": str(e)}

    def get_entry(self, key):
        for entry in self._get_all_metadata():
            if entry.get("id") == key:
                if os.path.isdir(entry.get("path", "")):
                    return {"success": True, "entry": entry}
                return {"success": False, "error": "Cache folder not found"}
        return {"success": False, "error": "Cache entry not found"}

    def get_all_entries(self):
        try:
            entries = [e for e in self._get_all_metadata() if os.path.isdir(e.get("path", ""))]
            return {"success": True, "entries": entries}
        except Exception as e:
            return {"success": False, "error": str(e)}

    def delete_entry(self, key):
        try:
            entries = self._get_all_metadata()
            for i, entry in enumerate(entries):
                if entry.get("id") == key:
                    if os.path.isdir(entry.get("path", "")):
                        shutil.rmtree(entry["path"])
                    entries.pop(i)
                    self._write_metadata(entries)
                    return {"success": True}
            return {"success": False, "error": "Cache entry not found"}
        except Exception as e:
            return {"success": False, "error": str(e)}

    def _update_metadata(self, entry):
        entries = [e for e in self._get_all_metadata() if e.get("id") != entry["id"]]
        entries.append(entry)
        self._write_metadata(entries)

    def _write_metadata(self, entries):
        with open(self.metadata_file, "w") as f:
            json.dump(entries, f, indent=2)

    def _get_all_metadata(self):
        try:
            with open(self.metadata_file, "r") as f:
                return json.load(f)
        except (FileNotFoundError, json.JSONDecodeError):
            return []
