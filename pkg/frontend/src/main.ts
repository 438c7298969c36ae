import { diffEdits, editFrame, parseServerEvent, queryFrame } from "./protocol.js";
import { ClientView, debounce, throttle } from "./state.js";
import { EditorDom } from "./editor.js";

const view = new ClientView();
const dom = new EditorDom(document);
let sent = ""; // text the server has been told about
let socket: WebSocket | null = null;

function connect(): void {
  const url = `${location.protocol === "https:" ? "wss" : "ws"}://${location.host}/ws`;
  socket = new WebSocket(url);
  socket.onopen = () => {
    sent = "";
    if (dom.input.value) pushEdits(); // replay local text into the fresh session
  };
  socket.onmessage = (msg) => {
    const event = parseServerEvent(msg.data as string);
    if (!event) return;
    view.apply(event);
    if (event.kind === "spans") dom.render(view);
    else if (event.kind === "markup") dom.renderMarkup(view.markup);
    else dom.appendTrace(event.trace);
  };
  socket.onclose = () => {
    socket = null;
    setTimeout(connect, 1000);
  };
}

function pushEdits(): void {
  if (!socket || socket.readyState !== WebSocket.OPEN) return;
  const current = dom.input.value;
  for (const op of diffEdits(sent, current)) {
    socket.send(editFrame(op));
  }
  sent = current;
}

const debouncedPush = debounce(50, pushEdits);

const throttledQuery = throttle(100, (offset: number) => {
  if (socket && socket.readyState === WebSocket.OPEN) {
    socket.send(queryFrame(Math.min(offset, sent.length)));
  }
});

dom.input.addEventListener("input", () => {
  dom.render(view); // local text is authoritative; repaint immediately
  debouncedPush();
});
dom.input.addEventListener("scroll", () => dom.syncScroll());
dom.input.addEventListener("keyup", () => throttledQuery(dom.input.selectionStart));
dom.input.addEventListener("click", () => {
  if (!dom.jumpIfLink(view)) throttledQuery(dom.input.selectionStart);
});

document.getElementById("trace-toggle")!.addEventListener("click", () => dom.toggleTrace());

connect();
