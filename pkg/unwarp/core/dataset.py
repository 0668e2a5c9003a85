import os
import typing as t

HERE = os.path.realpath(os.path.dirname(__file__))
DATA_FOLDER_ENV_VAR = "UNWARP_DATA_FOLDER"

T = t.TypeVar("T")
K = t.TypeVar("K")


class BaseDataset(t.Generic[K, T]):
    '''
    A folder of records addressed by key. Subclasses list their keys and
    load single records; iteration and length follow from those two.
    '''

    def keys(self) -> t.Sequence[K]:
        raise NotImplementedError

    def load(self, key: K) -> T:
        raise NotImplementedError

    def __len__(self) -> int:
        return len(self.keys())

    def __iter__(self) -> t.Generator[T, None, None]:
        for key in self.keys():
            yield self.load(key)


def get_path_for(dataset_name: str | None) -> str:
    '''
    Absolute path of the root data folder, or of `dataset_name` inside it.
    The root defaults to `data/` at the repository root and can be moved
    with the UNWARP_DATA_FOLDER environment variable.
    '''
    root = os.environ.get(DATA_FOLDER_ENV_VAR)
    if root is None:
        root = os.path.join(HERE, "..", "..", "data")
    root = os.path.abspath(root)
    return root if dataset_name is None else os.path.join(root, dataset_name)


def resolve_dataset_path(name_or_path: str) -> str:
    '''
    Existing paths (and anything that looks like one) are used as-is, bare
    names are looked up under the root data folder.
    '''
    if os.path.isabs(name_or_path) or os.path.exists(name_or_path) \
            or os.sep in name_or_path:
        return name_or_path
    return get_path_for(name_or_path)
