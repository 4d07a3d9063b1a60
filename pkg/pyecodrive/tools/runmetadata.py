""" Run manifest for provenance of pyecodrive results

A manifest records what a run was computed with (configuration, package
and system versions) and a time-stamped history of notes, file access and
changes. It is stored as json next to the run artifacts.
"""

import datetime
import getpass
import json
import logging
import platform
from collections import OrderedDict
from pathlib import Path

from pyecodrive.core.constants import DEFAULT_FILE_NAMES
from pyecodrive.tools.edutil import to_builtin
from pyecodrive.version import __version__ as pyecodrive_version

# history entry types
NOTE = "NOTE"
FILEIO = "FILEIO"
MODIFICATION = "MODIFICATION"
METADATA_CHANGE = "METADATA_CHANGE"

# entries settable with change_meta
_META_KEYS = ("description", "name", "solver")


def manifest_path(location):
    """File of the manifest for a folder or file location"""
    location = Path(location)
    if location.is_dir() or not location.suffix:
        return location / DEFAULT_FILE_NAMES["manifest"]
    return location


def system_info():
    """User, host, OS and version information stored with every run"""
    try:
        username = getpass.getuser()
    except Exception:
        username = "unknown"
    return {
        "username": username,
        "hostname": platform.node() or "unknown",
        "os": platform.system() or "unknown",
        "pyecodrive_version": pyecodrive_version,
        "python_version": platform.python_version(),
    }


class RunMetaData(object):
    """Manifest of a solver run

    Parameters
    ----------
    location : str or pathlib.Path, optional
        Output folder or manifest file. If a manifest exists there, it is
        read and description, name and solver passed here replace the
        stored ones (recorded in the history).
    description : str, optional
    name : str, optional
        Name of the run, e.g. the route name
    solver : str, optional
        benchmark, full-route-dpecms or lookahead
    config : dict, optional
        Resolved run configuration
    logger_function : callable, optional
        Receives every history entry, default logging.info; None for
        silence

    """

    def __init__(
        self,
        location=None,
        description=None,
        name=None,
        solver=None,
        config=None,
        logger_function=logging.info,
    ):
        self._file = manifest_path(location) if location else None
        self._log = logger_function or (lambda entry: None)

        if self._file and self._file.is_file():
            with self._file.open("r") as mf:
                self._content = json.load(mf, object_pairs_hook=OrderedDict)
            self._log("Read manifest from {}".format(self._file))
            for key, value in zip(_META_KEYS, (description, name, solver)):
                self.change_meta(key, value)
        else:
            self._content = OrderedDict(
                description=description or "Manifest of a pyecodrive run",
                name=name,
                solver=solver,
                version=pyecodrive_version,
                system=system_info(),
                config={},
                history=[],
            )
            self._log("Start recording the run manifest")
        if config:
            self.set_config(config)

    def __repr__(self):
        return "RunMetaData(name={}, solver={}, file={})".format(
            self.name, self.solver, self._file
        )

    def __str__(self):
        shown = self.history[:10]
        more = len(self.history) - len(shown)
        lines = [
            "Description: {}".format(self.description),
            "Run name: {}".format(self.name),
            "Solver: {}".format(self.solver),
            "Version: {}".format(self.version),
            "File: {}".format(self._file),
            "History:",
        ] + shown
        if more > 0:
            lines.append(" ... ({} more entries)".format(more))
        return "\n".join(lines)

    def __call__(self, note=None):
        """Add an optional note and print the manifest"""
        if note:
            self.note(note)
        print(self)

    # history

    def _record(self, entry_type, entry):
        stamped = "{:%Y%m%d %H:%M:%S} - {} -  {}".format(
            datetime.datetime.now(), entry_type, entry
        )
        self._content["history"].insert(0, stamped)
        self._log(stamped)

    def note(self, entry):
        self._record(NOTE, entry)

    def _add_fileio(self, entry):
        self._record(FILEIO, entry)

    def _add_modify(self, entry):
        self._record(MODIFICATION, entry)

    def _entries(self, entry_type):
        tag = " - {} - ".format(entry_type)
        return [entry for entry in self.history if tag in entry]

    @property
    def history(self):
        """All entries, newest first"""
        return self._content["history"]

    @property
    def note_history(self):
        return self._entries(NOTE)

    @property
    def file_io_history(self):
        return self._entries(FILEIO)

    @property
    def modification_history(self):
        return self._entries(MODIFICATION)

    # content

    @property
    def metadata(self):
        return self._content

    @property
    def description(self):
        return self._content["description"]

    @property
    def name(self):
        return self._content["name"]

    @property
    def solver(self):
        return self._content["solver"]

    @property
    def version(self):
        return self._content["version"]

    @property
    def config(self):
        return self._content["config"]

    def set_config(self, config):
        """Store the run configuration (numpy values converted for json)"""
        self._content["config"] = to_builtin(config)
        self._add_modify("Run configuration set")

    def change_meta(self, para, new_value, log=True):
        """Change a manifest entry, None leaves it untouched

        Raises
        ------
        ValueError
            For 'history', which can only be extended with note

        """
        if not new_value:
            return
        para = para.lower()
        if para == "history":
            raise ValueError('History can only be extended - use method "note"')
        old_value = self._content.get(para)
        if new_value == old_value:
            return
        self._content[para] = new_value
        if old_value and log:
            self._record(
                METADATA_CHANGE,
                'Changed parameter "{}" from "{}" to "{}"'.format(para, old_value, new_value),
            )

    def save(self, location=None):
        """Write the manifest as json

        Parameters
        ----------
        location : str or pathlib.Path, optional
            Folder or file; later saves reuse it. Default: where the
            manifest was read from or last saved to.

        Returns
        -------
        pathlib.Path or None if no location is known

        """
        if location:
            self._file = manifest_path(location)
        if not self._file:
            logging.error("No manifest file given for storing the run manifest")
            return None
        self._file.parent.mkdir(parents=True, exist_ok=True)
        with self._file.open("w") as mf:
            json.dump(self._content, mf, indent=4)
        return self._file
