import { startApp } from "./app.js";

startApp().catch((err) => {
  const el = document.getElementById("errors");
  if (el) {
    const div = document.createElement("div");
    div.className = "error";
    div.textContent = String(err);
    el.appendChild(div);
  }
  // eslint-disable-next-line no-console
  console.error(err);
});
