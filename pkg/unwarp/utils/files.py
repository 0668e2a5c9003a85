import logging
import os
import tempfile

LOG = logging.getLogger(__name__)


class OutputExistsError(RuntimeError):
    pass


def enumerate_files(
    folder: str,
    file_extension: str,
    subfolder: str | None = None,
) -> list[str]:
    '''Returns a sorted list of files in `folder` with the given extension.'''
    final_path = folder if subfolder is None else os.path.join(
        folder, subfolder)
    items = os.listdir(final_path)

    files: list[str] = []
    for item in items:
        item_path = os.path.join(final_path, item)
        if not os.path.isfile(item_path):
            # We don't care about folders.
            continue

        if not item_path.endswith(file_extension):
            # Ignore invalid file extensions.
            continue

        absolute_file_path = os.path.abspath(item_path)
        files.append(absolute_file_path)

    return sorted(files)


def ensure_writable(path: str, force: bool) -> None:
    '''Outputs are write-once unless `force` is given.'''
    if os.path.exists(path) and not force:
        raise OutputExistsError(
            f"Refusing to overwrite existing output {path} (use --force)")


def atomic_write_bytes(path: str, payload: bytes) -> None:
    '''
    Writes `payload` to a temporary file next to `path` and renames it into
    place, so readers never observe a partially written file.
    '''
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=folder,
                                    prefix=".tmp-",
                                    suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp_path, path)
    except OSError as ex:
        LOG.error("Failed to write %s: %s", path, ex)
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))
