from abc import ABC, abstractmethod
import logging
from typing import Dict, Any

from pydantic import ValidationError

from errors import SemFMError, StageError
from schemas import RunConfig


class BaseAgent(ABC):
    """
    Abstract base class for the pipeline agents.
    """
    def __init__(self, agent_name: str):
        self.agent_name = agent_name
        self.logger = logging.getLogger(f"agents.{agent_name}")

    @abstractmethod
    def execute(self, task: Dict[str, Any]) -> Dict[str, Any]:
        """
        Executes a given task.

        Args:
            task (Dict[str, Any]): {"action": str, "params": dict}.

        Returns:
            Dict[str, Any]: {"status": "success", ...} or
            {"status": "error", "stage": ..., "message": ..., "exit_code": ...}.
        """
        pass

    def unknown_action(self, action: Any) -> Dict[str, Any]:
        return {"status": "error", "stage": None, "message": f"Unknown action '{action}' for {self.agent_name}",
                "exit_code": 2}

    def error_result(self, exc: BaseException) -> Dict[str, Any]:
        """Status dict for a failed task; the message names the stage when known."""
        if isinstance(exc, ValidationError):
            return {"status": "error", "stage": "config", "message": f"invalid configuration: {exc}", "exit_code": 2}
        stage = getattr(exc, "stage", None)
        code = exc.exit_code if isinstance(exc, SemFMError) else 1
        cause = exc.cause if isinstance(exc, StageError) else exc
        if isinstance(cause, ValidationError):
            code = 2
        elif not isinstance(cause, SemFMError):
            self.logger.exception("unexpected failure in stage %s", stage)
        return {"status": "error", "stage": stage, "message": str(cause), "exit_code": code}

    @staticmethod
    def run_config(params: Dict[str, Any]) -> RunConfig:
        cfg = params.get("config")
        if isinstance(cfg, RunConfig):
            return cfg
        return RunConfig.model_validate(cfg or {})
